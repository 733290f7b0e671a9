#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ghostprobe/layers.hpp"

namespace ghostprobe {

struct UNetConfig {
  std::int64_t in_channels = 4;  // RGB + depth gradient
  std::int64_t base_channels = 8;
  std::int64_t depth = 3;  // number of contracting stages

  void validate() const {
    if (in_channels < 1 || base_channels < 1 || depth < 1) {
      throw SpecError("UNetConfig: in_channels, base_channels and depth must be >= 1");
    }
  }

  // Channels of skip l (0 = finest); the first stage maps the input to 2C.
  std::int64_t skip_channels(std::int64_t level) const { return 2 * base_channels << level; }
  std::int64_t bottleneck_channels() const { return skip_channels(depth); }
  std::int64_t final_channels() const { return skip_channels(0); }
};

// Two 3x3 convolutions with a single ReLU after the second.
template <typename T>
struct ConvBlock {
  ConvLayer<T> first;
  ConvLayer<T> second;
};

template <typename T>
struct ExpandParams {
  ConvLayer<T> up;  // 2x2 transpose convolution
  ConvBlock<T> block;
};

template <typename T>
struct ContractOutput {
  BasicTensor<T> skip;
  BasicTensor<T> down;
};

template <typename T>
struct Pyramid2D {
  std::vector<BasicTensor<T>> skips;  // finest first
  BasicTensor<T> bottleneck;
  std::vector<BasicTensor<T>> decoded;  // coarsest first; decoded.back() == final
  BasicTensor<T> final;
};

template <typename T>
ConvBlock<T> make_conv_block(std::int64_t in_ch, std::int64_t out_ch, Rng& rng) {
  return ConvBlock<T>{make_conv<T>(in_ch, out_ch, 3, rng), make_conv<T>(out_ch, out_ch, 3, rng)};
}

template <typename T>
BasicTensor<T> conv_block(const BasicTensor<T>& x, const ConvBlock<T>& block) {
  return relu(conv2d(conv2d(x, block.first), block.second));
}

template <typename T>
ContractOutput<T> contract_stage(const BasicTensor<T>& x, const ConvBlock<T>& block) {
  if (x.rank() != 4 || x.dim(2) % 2 != 0 || x.dim(3) % 2 != 0) {
    throw DimensionError("contract_stage requires even spatial extents, got " + shape_str(x.shape()));
  }
  auto skip = conv_block(x, block);
  auto down = maxpool2x2(skip);
  return {std::move(skip), std::move(down)};
}

// Upsample x, concatenate [upsampled, skip] on channels, then the conv block.
template <typename T>
BasicTensor<T> expand_stage(const BasicTensor<T>& x, const BasicTensor<T>& skip,
                            const ExpandParams<T>& params) {
  if (x.rank() != 4 || skip.rank() != 4 || skip.dim(0) != x.dim(0) ||
      skip.dim(2) != 2 * x.dim(2) || skip.dim(3) != 2 * x.dim(3)) {
    throw DimensionError("expand_stage: skip " + shape_str(skip.shape()) +
                         " does not match upsampled " + shape_str(x.shape()));
  }
  if (skip.dim(1) != params.up.out_channels()) {
    throw DimensionError("expand_stage: skip channels " + std::to_string(skip.dim(1)) +
                         " != upsampled channels " + std::to_string(params.up.out_channels()));
  }
  const auto up = transpose_conv2x2(x, params.up);
  return conv_block(concat_channels(up, skip), params.block);
}

template <typename T>
class UNet2D {
 public:
  // extra_channels[j] widens the input of decoder stage j (j == depth widens
  // the final map); used to splice fused features into the decoder.
  UNet2D(const UNetConfig& config, Rng& rng, std::vector<std::int64_t> extra_channels = {})
      : config_(config), extra_(std::move(extra_channels)) {
    config_.validate();
    extra_.resize(static_cast<std::size_t>(config_.depth + 1), 0);
    for (std::int64_t l = 0; l < config_.depth; ++l) {
      const auto in_ch = l == 0 ? config_.in_channels : config_.skip_channels(l - 1);
      encoder_.push_back(make_conv_block<T>(in_ch, config_.skip_channels(l), rng));
    }
    bottleneck_ = make_conv_block<T>(config_.skip_channels(config_.depth - 1),
                                     config_.bottleneck_channels(), rng);
    for (std::int64_t j = 0; j < config_.depth; ++j) {
      const auto x_ch = config_.skip_channels(config_.depth - j) + extra_[static_cast<std::size_t>(j)];
      const auto s = config_.skip_channels(config_.depth - 1 - j);
      decoder_.push_back(ExpandParams<T>{make_transpose_conv<T>(x_ch, s, rng),
                                         make_conv_block<T>(2 * s, s, rng)});
    }
  }

  const UNetConfig& config() const { return config_; }

  // Channels of the map produced by decoder position j (0 = bottleneck).
  std::int64_t decoder_channels(std::int64_t j) const {
    return config_.skip_channels(config_.depth - j);
  }
  std::int64_t output_channels() const {
    return config_.final_channels() + extra_[static_cast<std::size_t>(config_.depth)];
  }

  void check_input(const BasicTensor<T>& x) const {
    const std::int64_t factor = std::int64_t{1} << config_.depth;
    if (x.rank() != 4 || x.dim(1) != config_.in_channels) {
      throw DimensionError("UNet input must be [B," + std::to_string(config_.in_channels) +
                           ",H,W], got " + shape_str(x.shape()));
    }
    if (x.dim(2) % factor != 0 || x.dim(3) % factor != 0) {
      throw DimensionError("UNet input extents must be divisible by " + std::to_string(factor));
    }
  }

  // Fills skips and bottleneck.
  Pyramid2D<T> encode(const BasicTensor<T>& x) const {
    check_input(x);
    Pyramid2D<T> pyr;
    BasicTensor<T> cur = x;
    for (const auto& block : encoder_) {
      auto out = contract_stage(cur, block);
      pyr.skips.push_back(std::move(out.skip));
      cur = std::move(out.down);
    }
    pyr.bottleneck = conv_block(cur, bottleneck_);
    return pyr;
  }

  BasicTensor<T> decode_stage(std::int64_t j, const BasicTensor<T>& x,
                              const Pyramid2D<T>& pyr) const {
    const auto skip_index = static_cast<std::size_t>(config_.depth - 1 - j);
    return expand_stage(x, pyr.skips[skip_index], decoder_[static_cast<std::size_t>(j)]);
  }

  Pyramid2D<T> forward(const BasicTensor<T>& x) const {
    auto pyr = encode(x);
    BasicTensor<T> cur = pyr.bottleneck;
    for (std::int64_t j = 0; j < config_.depth; ++j) {
      cur = decode_stage(j, cur, pyr);
      pyr.decoded.push_back(cur);
    }
    pyr.final = cur;
    return pyr;
  }

  void collect_parameters(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t l = 0; l < encoder_.size(); ++l) {
      const auto p = prefix + ".enc" + std::to_string(l);
      append_parameters(out, p + ".conv1", encoder_[l].first);
      append_parameters(out, p + ".conv2", encoder_[l].second);
    }
    append_parameters(out, prefix + ".bottleneck.conv1", bottleneck_.first);
    append_parameters(out, prefix + ".bottleneck.conv2", bottleneck_.second);
    for (std::size_t j = 0; j < decoder_.size(); ++j) {
      const auto p = prefix + ".dec" + std::to_string(j);
      append_parameters(out, p + ".up", decoder_[j].up);
      append_parameters(out, p + ".conv1", decoder_[j].block.first);
      append_parameters(out, p + ".conv2", decoder_[j].block.second);
    }
  }

 private:
  UNetConfig config_;
  std::vector<std::int64_t> extra_;
  std::vector<ConvBlock<T>> encoder_;
  ConvBlock<T> bottleneck_;
  std::vector<ExpandParams<T>> decoder_;
};

// Plain encoder-decoder pass without fusion.
template <typename T>
Pyramid2D<T> unet_forward(const BasicTensor<T>& input, const UNet2D<T>& net) {
  return net.forward(input);
}

}  // namespace ghostprobe
