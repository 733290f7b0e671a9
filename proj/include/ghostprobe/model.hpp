#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ghostprobe/detection.hpp"
#include "ghostprobe/fusion.hpp"

namespace ghostprobe {

struct AblationFlags {
  bool rgb = true;
  bool ig = true;  // depth-gradient image
  bool pcd = true;

  bool any() const { return rgb || ig || pcd; }
  std::string label() const {
    std::string s;
    auto add = [&](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += "+";
      s += name;
    };
    add(rgb, "RGB");
    add(ig, "IG");
    add(pcd, "PCD");
    return s.empty() ? "none" : s;
  }
  bool operator==(const AblationFlags&) const = default;
};

// Channels of the 2D input for a flag set. Without RGB and IG the 2D branch
// still needs a query map, so it receives a single constant channel.
inline std::int64_t image_channels(const AblationFlags& f) {
  const std::int64_t c = (f.rgb ? 3 : 0) + (f.ig ? 1 : 0);
  return c == 0 ? 1 : c;
}

struct ModelConfig {
  UNetConfig unet;
  PointNetConfig pointnet;
  FusionConfig fusion;
  AblationFlags flags;
  std::int64_t input_size = 64;
  std::int64_t max_points = 512;

  void validate() const {
    if (!flags.any()) throw SpecError("ModelConfig: at least one of rgb/ig/pcd must be enabled");
    if (unet.in_channels != image_channels(flags)) {
      throw SpecError("ModelConfig: unet.in_channels disagrees with the input flags");
    }
    unet.validate();
    if (input_size % (std::int64_t{1} << unet.depth) != 0) {
      throw SpecError("ModelConfig: input_size must be divisible by 2^depth");
    }
    if (flags.pcd) {
      pointnet.validate(max_points);
      const auto levels = static_cast<std::int64_t>(pointnet.levels.size());
      if (fusion.point_level < -1 || fusion.point_level > levels) {
        throw SpecError("ModelConfig: fusion.point_level out of range");
      }
      if (fusion.fuse_level < 0 || fusion.fuse_level > unet.depth) {
        throw SpecError("ModelConfig: fusion.fuse_level out of range");
      }
      if (fusion.dim < 1) throw SpecError("ModelConfig: fusion.dim must be >= 1");
    }
  }

  std::size_t point_level() const {
    return fusion.point_level < 0 ? pointnet.levels.size()
                                  : static_cast<std::size_t>(fusion.point_level);
  }
};

// Desk-scale defaults: 64x64 input, 512 points.
inline ModelConfig desk_model_config(const AblationFlags& flags = {}) {
  ModelConfig cfg;
  cfg.flags = flags;
  cfg.unet = UNetConfig{image_channels(flags), 8, 3};
  cfg.pointnet.in_features = 3;
  cfg.pointnet.levels = {SALevelConfig{256, 8, {16, 16, 32}}, SALevelConfig{64, 8, {32, 32, 64}},
                         SALevelConfig{16, 8, {64, 64, 128}}, SALevelConfig{4, 8, {128, 128, 256}}};
  cfg.pointnet.fp_widths = {32, 32, 64, 128};
  cfg.fusion = FusionConfig{64, 0, -1};
  cfg.input_size = 64;
  cfg.max_points = 512;
  return cfg;
}

template <typename T>
class DPGPModel {
 public:
  DPGPModel(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    std::vector<std::int64_t> extra(static_cast<std::size_t>(config_.unet.depth + 1), 0);
    if (config_.flags.pcd) extra[static_cast<std::size_t>(config_.fusion.fuse_level)] = config_.fusion.dim;
    unet_.emplace(config_.unet, rng, extra);
    if (config_.flags.pcd) {
      pointnet_.emplace(config_.pointnet, rng);
      const auto j = config_.fusion.fuse_level;
      const auto query_width = unet_->decoder_channels(j);
      const auto key_width = pointnet_->decoded_width(config_.point_level());
      projection_ = make_projection<T>(query_width, key_width, config_.fusion.dim, rng);
    }
    head_ = make_conv<T>(unet_->output_channels(), 1, 1, rng);
  }

  const ModelConfig& config() const { return config_; }
  const UNet2D<T>& unet() const { return *unet_; }

  // image [B,C,H,W], cloud [B,N,3]+[B,N,3] -> probability map [B,1,H,W].
  BasicTensor<T> forward(const BasicTensor<T>& image, const PointCloud<T>& cloud) const {
    return head_forward(features(image, cloud), head_);
  }

  BasicTensor<T> features(const BasicTensor<T>& image, const PointCloud<T>& cloud) const {
    if (!config_.flags.pcd) return unet_->forward(image).final;
    const auto pyr2d = unet_->encode(image);
    const auto level = config_.point_level();
    const auto pyr3d = pointnet_->forward(cloud, level);
    return fuse_into_head(pyr2d, pyr3d.decoded[level], config_.fusion, *unet_, projection_);
  }

  ParameterList<T> parameters() const {
    ParameterList<T> out;
    unet_->collect_parameters(out, "unet");
    if (config_.flags.pcd) {
      pointnet_->collect_parameters(out, "pointnet", config_.point_level());
      out.push_back({"fusion.w_q", projection_.w_q});
      out.push_back({"fusion.w_k", projection_.w_k});
      out.push_back({"fusion.w_v", projection_.w_v});
    }
    append_parameters(out, "head", head_);
    return out;
  }

 private:
  ModelConfig config_;
  std::optional<UNet2D<T>> unet_;
  std::optional<PointNet3D<T>> pointnet_;
  ProjectionWeights<T> projection_;
  ConvLayer<T> head_;
};

}  // namespace ghostprobe
