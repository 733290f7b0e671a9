#pragma once

#include <cmath>
#include <cstdint>

#include "ghostprobe/layers.hpp"
#include "ghostprobe/pointnet.hpp"
#include "ghostprobe/unet.hpp"

namespace ghostprobe {

struct FusionConfig {
  std::int64_t dim = 64;
  // Decoder position whose 2D map supplies the queries: 0 is the bottleneck,
  // j > 0 the output of decoder stage j-1.
  std::int64_t fuse_level = 0;
  // Point pyramid level supplying keys/values; -1 selects the coarsest level.
  std::int64_t point_level = -1;
};

// W_Q (C x dim), W_K and W_V (D x dim). No biases.
template <typename T>
struct ProjectionWeights {
  BasicTensor<T> w_q;
  BasicTensor<T> w_k;
  BasicTensor<T> w_v;

  std::int64_t dim() const { return w_q.dim(1); }
};

template <typename T>
ProjectionWeights<T> make_projection(std::int64_t query_width, std::int64_t key_width,
                                     std::int64_t dim, Rng& rng) {
  return ProjectionWeights<T>{init::xavier<T>(query_width, dim, rng),
                              init::xavier<T>(key_width, dim, rng),
                              init::xavier<T>(key_width, dim, rng)};
}

// Attention matrix softmax(Q K^T / sqrt(dim)), [B, H*W, N].
template <typename T>
BasicTensor<T> attention_weights(const BasicTensor<T>& f2d, const BasicTensor<T>& f3d,
                                 const ProjectionWeights<T>& w) {
  if (f2d.rank() != 4 || f3d.rank() != 3 || f2d.dim(0) != f3d.dim(0)) {
    throw DimensionError("cross_attention expects f2d [B,C,H,W] and f3d [B,N,D]");
  }
  if (w.w_q.dim(0) != f2d.dim(1) || w.w_k.dim(0) != f3d.dim(2) || w.w_v.dim(0) != f3d.dim(2) ||
      w.w_k.dim(1) != w.dim() || w.w_v.dim(1) != w.dim()) {
    throw DimensionError("cross_attention: projection widths do not match features (C=" +
                         std::to_string(f2d.dim(1)) + ", D=" + std::to_string(f3d.dim(2)) + ")");
  }
  const auto q = matmul(flatten_spatial(f2d), w.w_q);
  const auto k = matmul(f3d, w.w_k);
  const T inv_sqrt_dim = static_cast<T>(1.0 / std::sqrt(static_cast<double>(w.dim())));
  return softmax_rows(scale(matmul(q, transpose_last2(k)), inv_sqrt_dim));
}

// 2D features query 3D features: [B,C,H,W] x [B,N,D] -> [B,H*W,dim].
template <typename T>
BasicTensor<T> cross_attention(const BasicTensor<T>& f2d, const BasicTensor<T>& f3d,
                               const ProjectionWeights<T>& w) {
  const auto attn = attention_weights(f2d, f3d, w);
  return matmul(attn, matmul(f3d, w.w_v));
}

// Runs the decoder from the bottleneck, splicing the attention output into the
// configured level as extra channels. Returns the full-resolution feature map.
template <typename T>
BasicTensor<T> fuse_into_head(const Pyramid2D<T>& encoded, const BasicTensor<T>& f3d,
                              const FusionConfig& cfg, const UNet2D<T>& unet,
                              const ProjectionWeights<T>& weights) {
  const auto depth = unet.config().depth;
  if (cfg.fuse_level < 0 || cfg.fuse_level > depth) {
    throw DimensionError("fuse_level " + std::to_string(cfg.fuse_level) + " outside [0, " +
                         std::to_string(depth) + "]");
  }
  BasicTensor<T> cur = encoded.bottleneck;
  for (std::int64_t j = 0; j <= depth; ++j) {
    if (j == cfg.fuse_level) {
      const auto fused = cross_attention(cur, f3d, weights);
      cur = concat_channels(cur, unflatten_spatial(fused, cur.dim(2), cur.dim(3)));
    }
    if (j < depth) cur = unet.decode_stage(j, cur, encoded);
  }
  return cur;
}

}  // namespace ghostprobe
