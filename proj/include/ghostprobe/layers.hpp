#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ghostprobe/ops.hpp"
#include "ghostprobe/rng.hpp"

namespace ghostprobe {

template <typename T>
struct NamedParameter {
  std::string name;
  BasicTensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

namespace init {

// Kaiming normal: std = sqrt(2 / fan_in).
template <typename T>
BasicTensor<T> kaiming(Shape shape, std::int64_t fan_in, Rng& rng) {
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  std::vector<T> data(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& v : data) v = static_cast<T>(rng.normal(0.0, stddev));
  return BasicTensor<T>(std::move(shape), std::move(data), true);
}

// Xavier uniform over [-a, a], a = sqrt(6 / (fan_in + fan_out)).
template <typename T>
BasicTensor<T> xavier(std::int64_t fan_in, std::int64_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<T> data(static_cast<std::size_t>(fan_in * fan_out));
  for (auto& v : data) v = static_cast<T>(rng.uniform(-bound, bound));
  return BasicTensor<T>(Shape{fan_in, fan_out}, std::move(data), true);
}

}  // namespace init

template <typename T>
ConvLayer<T> make_conv(std::int64_t in_ch, std::int64_t out_ch, std::int64_t kernel, Rng& rng,
                       int stride = 1, int padding = -1) {
  if (padding < 0) padding = static_cast<int>(kernel / 2);
  return ConvLayer<T>{init::kaiming<T>(Shape{out_ch, in_ch, kernel, kernel},
                                       in_ch * kernel * kernel, rng),
                      BasicTensor<T>::zeros(Shape{out_ch}, true), stride, padding};
}

// 2x2 stride-2 transpose convolution; each output pixel sees one tap per input channel.
template <typename T>
ConvLayer<T> make_transpose_conv(std::int64_t in_ch, std::int64_t out_ch, Rng& rng) {
  return ConvLayer<T>{init::kaiming<T>(Shape{in_ch, out_ch, 2, 2}, in_ch, rng),
                      BasicTensor<T>::zeros(Shape{out_ch}, true), 2, 0};
}

template <typename T>
LinearLayer<T> make_linear(std::int64_t in, std::int64_t out, Rng& rng) {
  return LinearLayer<T>{init::kaiming<T>(Shape{in, out}, in, rng),
                        BasicTensor<T>::zeros(Shape{out}, true)};
}

template <typename T>
void append_parameters(ParameterList<T>& out, const std::string& prefix,
                       const ConvLayer<T>& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  out.push_back({prefix + ".bias", layer.bias});
}

template <typename T>
void append_parameters(ParameterList<T>& out, const std::string& prefix,
                       const LinearLayer<T>& layer) {
  out.push_back({prefix + ".weight", layer.weight});
  if (layer.bias.defined()) out.push_back({prefix + ".bias", layer.bias});
}

}  // namespace ghostprobe
