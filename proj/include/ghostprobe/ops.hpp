#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "ghostprobe/tensor.hpp"

namespace ghostprobe {

// Weights A (out_ch x in_ch x kh x kw) and bias b (out_ch). For a transpose
// convolution the weight layout is (in_ch x out_ch x 2 x 2).
template <typename T>
struct ConvLayer {
  BasicTensor<T> weight;
  BasicTensor<T> bias;
  int stride = 1;
  int padding = 0;

  std::int64_t out_channels() const { return bias.dim(0); }
};

// Dense layer on the last axis: y = x W + b with W (in x out).
template <typename T>
struct LinearLayer {
  BasicTensor<T> weight;
  BasicTensor<T> bias;  // may be undefined (no bias)
};

// x [B,C,H,W] -> [B,O,H',W'], zero padding.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& x, const ConvLayer<T>& layer);

// Stride-2 2x2 transpose convolution: [B,C,H,W] -> [B,O,2H,2W].
template <typename T>
BasicTensor<T> transpose_conv2x2(const BasicTensor<T>& x, const ConvLayer<T>& layer);

// [B,C,H,W] -> [B,C,H/2,W/2]; H and W must be even.
template <typename T>
BasicTensor<T> maxpool2x2(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b, std::int64_t axis);

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return concat(a, b, 1);
}

// Half-open range [begin, end) along axis.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& x, std::int64_t axis, std::int64_t begin,
                     std::int64_t end);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& x, Shape shape);

// [M,K]x[K,N], [B,M,K]x[K,N] (shared right operand) or [B,M,K]x[B,K,N].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// Swaps the last two axes.
template <typename T>
BasicTensor<T> transpose_last2(const BasicTensor<T>& x);

// Softmax over the last axis.
template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& x);

// [B,C,H,W] -> [B,H*W,C]
template <typename T>
BasicTensor<T> flatten_spatial(const BasicTensor<T>& x);

// [B,H*W,C] -> [B,C,H,W]
template <typename T>
BasicTensor<T> unflatten_spatial(const BasicTensor<T>& x, std::int64_t height,
                                 std::int64_t width);

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const LinearLayer<T>& layer);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& x, T factor);

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& x);

// Max over one axis; ties resolve to the lowest index.
template <typename T>
BasicTensor<T> max_reduce(const BasicTensor<T>& x, std::int64_t axis);

// x [B,N,D], indices with shape [B, ...] holding row numbers into N.
// Result shape is [B, ..., D].
template <typename T>
BasicTensor<T> gather(const BasicTensor<T>& x, std::span<const std::int64_t> indices,
                      const Shape& index_shape);

// out[b,m,:] = sum_j weights[b,m,j] * x[b, indices[b,m,j], :] with indices and
// weights shaped [B,M,k]. Weights are constants.
template <typename T>
BasicTensor<T> weighted_gather(const BasicTensor<T>& x, std::span<const std::int64_t> indices,
                               std::span<const T> weights, std::int64_t m, std::int64_t k);

inline constexpr double kBceEpsilon = 1e-7;

// Mean binary cross-entropy. Predictions are clamped to [eps, 1-eps] before the log.
template <typename T>
BasicTensor<T> bce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

}  // namespace ghostprobe
