#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ghostprobe/layers.hpp"
#include "ghostprobe/point_cloud.hpp"
#include "ghostprobe/sampling.hpp"

namespace ghostprobe {

struct SALevelConfig {
  std::int64_t n_out = 0;  // centroid count
  std::int64_t k = 8;      // neighborhood size
  std::vector<std::int64_t> mlp_widths;
};

struct PointNetConfig {
  std::int64_t in_features = 3;  // RGB
  std::vector<SALevelConfig> levels;
  // fp_widths[l] is the width of the decoded features at level l (0 = input points).
  std::vector<std::int64_t> fp_widths;
  std::int64_t interpolation_k = 3;

  void validate(std::int64_t input_points) const;
  std::int64_t level_width(std::size_t level) const {
    return level == 0 ? in_features : levels[level - 1].mlp_widths.back();
  }
};

template <typename T>
struct Pyramid3D {
  std::vector<PointCloud<T>> levels;  // levels[0] is the input cloud
  // decoded[l] for l in [decode_to, L]; decoded[L] aliases levels[L].feats,
  // lower entries are undefined until propagated.
  std::vector<BasicTensor<T>> decoded;
};

inline constexpr double kCoincidenceEpsilon = 1e-8;

// FPS per batch element; indices [B, n_out].
template <typename T>
std::vector<std::int64_t> farthest_point_sample_batched(const BasicTensor<T>& coords,
                                                        std::int64_t n_out,
                                                        std::int64_t start_index = 0) {
  const auto b = coords.dim(0), n = coords.dim(1);
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(b * n_out));
  for (std::int64_t i = 0; i < b; ++i) {
    const auto picks = farthest_point_sample<T>(coords.data().subspan(static_cast<std::size_t>(i * n * 3), static_cast<std::size_t>(n * 3)), n_out, start_index);
    out.insert(out.end(), picks.begin(), picks.end());
  }
  return out;
}

// K nearest cloud points for every centroid, indices [B, M, k].
template <typename T>
std::vector<std::int64_t> knn_indices(const BasicTensor<T>& coords, const BasicTensor<T>& centroids,
                                      std::int64_t k) {
  const auto b = coords.dim(0), n = coords.dim(1), m = centroids.dim(1);
  if (centroids.dim(0) != b) throw DimensionError("knn: batch mismatch");
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(b * m * k));
  for (std::int64_t i = 0; i < b; ++i) {
    const auto idx = k_nearest<T>(
        coords.data().subspan(static_cast<std::size_t>(i * n * 3), static_cast<std::size_t>(n * 3)),
        centroids.data().subspan(static_cast<std::size_t>(i * m * 3), static_cast<std::size_t>(m * 3)), k);
    out.insert(out.end(), idx.begin(), idx.end());
  }
  return out;
}

// Neighborhoods [B,M,K,3+D]: coordinates relative to each centroid followed by
// the neighbors' features.
template <typename T>
BasicTensor<T> knn_group(const PointCloud<T>& cloud, const BasicTensor<T>& centroids,
                         std::int64_t k) {
  const auto b = cloud.batch(), n = cloud.size(), m = centroids.dim(1);
  if (k > n) throw DimensionError("knn_group: k=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  const auto idx = knn_indices(cloud.coords, centroids, k);
  std::vector<T> local(static_cast<std::size_t>(b * m * k * 3));
  const auto& xyz = cloud.coords.data();
  const auto& cen = centroids.data();
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t c = 0; c < m; ++c) {
      for (std::int64_t j = 0; j < k; ++j) {
        const auto e = (i * m + c) * k + j;
        const auto p = i * n + idx[static_cast<std::size_t>(e)];
        for (int a = 0; a < 3; ++a) {
          local[static_cast<std::size_t>(3 * e + a)] =
              xyz[static_cast<std::size_t>(3 * p + a)] - cen[static_cast<std::size_t>(3 * (i * m + c) + a)];
        }
      }
    }
  }
  BasicTensor<T> local_t(Shape{b, m, k, 3}, std::move(local));
  const auto grouped = gather(cloud.feats, idx, Shape{b, m, k});
  return concat(local_t, grouped, 3);
}

// FPS centroids, KNN grouping, shared MLP (linear + ReLU per layer) and max
// pooling over each neighborhood.
template <typename T>
PointCloud<T> set_abstraction(const PointCloud<T>& cloud, const SALevelConfig& cfg,
                              const std::vector<LinearLayer<T>>& mlp) {
  if (cfg.n_out < 1 || cfg.n_out > cloud.size()) {
    throw DimensionError("set_abstraction: n_out=" + std::to_string(cfg.n_out) +
                         " with N=" + std::to_string(cloud.size()));
  }
  const auto picks = farthest_point_sample_batched(cloud.coords, cfg.n_out);
  const auto b = cloud.batch(), n = cloud.size();
  std::vector<T> cen(static_cast<std::size_t>(b * cfg.n_out * 3));
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t c = 0; c < cfg.n_out; ++c) {
      const auto p = i * n + picks[static_cast<std::size_t>(i * cfg.n_out + c)];
      for (int a = 0; a < 3; ++a) {
        cen[static_cast<std::size_t>(3 * (i * cfg.n_out + c) + a)] = cloud.coords.data()[static_cast<std::size_t>(3 * p + a)];
      }
    }
  }
  BasicTensor<T> centroids(Shape{b, cfg.n_out, 3}, std::move(cen));
  auto h = knn_group(cloud, centroids, cfg.k);
  for (const auto& layer : mlp) h = relu(linear(h, layer));
  auto pooled = max_reduce(h, 2);
  std::vector<std::int64_t> valid(cloud.valid_count.size());
  for (std::size_t i = 0; i < valid.size(); ++i) valid[i] = std::min(cloud.valid_count[i], cfg.n_out);
  return PointCloud<T>{std::move(centroids), std::move(pooled), std::move(valid)};
}

// Inverse-distance weights over the k nearest source points. A source point
// closer than kCoincidenceEpsilon takes the full weight.
template <typename T>
void interpolation_weights(const BasicTensor<T>& target_coords, const BasicTensor<T>& source_coords,
                           std::int64_t k, std::vector<std::int64_t>& indices,
                           std::vector<T>& weights) {
  const auto m = target_coords.dim(1), b = target_coords.dim(0);
  if (k > source_coords.dim(1)) {
    throw DimensionError("interpolate_features: k=" + std::to_string(k) +
                         " exceeds source size " + std::to_string(source_coords.dim(1)));
  }
  indices = knn_indices(source_coords, target_coords, k);
  weights.assign(indices.size(), T{0});
  const auto s = source_coords.dim(1);
  for (std::int64_t i = 0; i < b; ++i) {
    for (std::int64_t t = 0; t < m; ++t) {
      const auto row = (i * m + t) * k;
      double total = 0.0;
      std::int64_t coincident = -1;
      std::vector<double> inv(static_cast<std::size_t>(k));
      for (std::int64_t j = 0; j < k; ++j) {
        const auto src = indices[static_cast<std::size_t>(row + j)];
        const double d = std::sqrt(squared_distance(
            source_coords.data().subspan(static_cast<std::size_t>(i * s * 3)), src,
            target_coords.data().subspan(static_cast<std::size_t>(i * m * 3)), t));
        if (d < kCoincidenceEpsilon) {
          coincident = j;
          break;
        }
        inv[static_cast<std::size_t>(j)] = 1.0 / d;
        total += 1.0 / d;
      }
      for (std::int64_t j = 0; j < k; ++j) {
        auto& w = weights[static_cast<std::size_t>(row + j)];
        if (coincident >= 0) {
          w = j == coincident ? T{1} : T{0};
        } else {
          w = static_cast<T>(inv[static_cast<std::size_t>(j)] / total);
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> interpolate_features(const BasicTensor<T>& target_coords,
                                    const BasicTensor<T>& source_coords,
                                    const BasicTensor<T>& source_feats, std::int64_t k = 3) {
  std::vector<std::int64_t> indices;
  std::vector<T> weights;
  interpolation_weights(target_coords, source_coords, k, indices, weights);
  return weighted_gather<T>(source_feats, indices, weights, target_coords.dim(1), k);
}

// One propagation step: interpolate coarse features onto the finer level,
// concatenate [interpolated, encoder], 1x1 conv + ReLU.
template <typename T>
BasicTensor<T> propagate_level(const PointCloud<T>& fine, const BasicTensor<T>& coarse_coords,
                               const BasicTensor<T>& coarse_feats, const LinearLayer<T>& layer,
                               std::int64_t k) {
  const auto kk = std::min<std::int64_t>(k, coarse_coords.dim(1));
  const auto up = interpolate_features(fine.coords, coarse_coords, coarse_feats, kk);
  return relu(linear(concat(up, fine.feats, 2), layer));
}

template <typename T>
class PointNet3D {
 public:
  PointNet3D(const PointNetConfig& config, Rng& rng) : config_(config) {
    const auto levels = config_.levels.size();
    if (levels == 0) throw SpecError("PointNetConfig needs at least one set-abstraction level");
    if (config_.fp_widths.size() != levels) {
      throw SpecError("PointNetConfig: fp_widths must have one entry per level");
    }
    for (std::size_t l = 0; l < levels; ++l) {
      std::vector<LinearLayer<T>> mlp;
      auto in = 3 + config_.level_width(l);
      for (const auto w : config_.levels[l].mlp_widths) {
        mlp.push_back(make_linear<T>(in, w, rng));
        in = w;
      }
      sa_.push_back(std::move(mlp));
    }
    fp_.resize(levels);
    for (std::size_t l = levels; l-- > 0;) {
      const auto coarse = l + 1 == levels ? config_.level_width(levels)
                                          : config_.fp_widths[l + 1];
      fp_[l] = make_linear<T>(coarse + config_.level_width(l), config_.fp_widths[l], rng);
    }
  }

  const PointNetConfig& config() const { return config_; }
  std::size_t depth() const { return config_.levels.size(); }

  // Width of the features available at pyramid level l after decoding to it.
  std::int64_t decoded_width(std::size_t level) const {
    return level == depth() ? config_.level_width(level) : config_.fp_widths[level];
  }

  Pyramid3D<T> encode(const PointCloud<T>& cloud) const {
    Pyramid3D<T> pyr;
    pyr.levels.push_back(cloud);
    for (std::size_t l = 0; l < depth(); ++l) {
      pyr.levels.push_back(set_abstraction(pyr.levels.back(), config_.levels[l], sa_[l]));
    }
    pyr.decoded.resize(depth() + 1);
    pyr.decoded[depth()] = pyr.levels.back().feats;
    return pyr;
  }

  // Runs feature propagation from the coarsest level down to decode_to.
  void propagate(Pyramid3D<T>& pyr, std::size_t decode_to) const {
    for (std::size_t l = depth(); l > decode_to; --l) {
      pyr.decoded[l - 1] = propagate_level(pyr.levels[l - 1], pyr.levels[l].coords, pyr.decoded[l],
                                           fp_[l - 1], config_.interpolation_k);
    }
  }

  Pyramid3D<T> forward(const PointCloud<T>& cloud, std::size_t decode_to = 0) const {
    auto pyr = encode(cloud);
    propagate(pyr, decode_to);
    return pyr;
  }

  void collect_parameters(ParameterList<T>& out, const std::string& prefix,
                          std::size_t decode_to = 0) const {
    for (std::size_t l = 0; l < sa_.size(); ++l) {
      for (std::size_t i = 0; i < sa_[l].size(); ++i) {
        append_parameters(out, prefix + ".sa" + std::to_string(l) + ".mlp" + std::to_string(i), sa_[l][i]);
      }
    }
    for (std::size_t l = decode_to; l < fp_.size(); ++l) {
      append_parameters(out, prefix + ".fp" + std::to_string(l), fp_[l]);
    }
  }

 private:
  PointNetConfig config_;
  std::vector<std::vector<LinearLayer<T>>> sa_;
  std::vector<LinearLayer<T>> fp_;
};

inline void PointNetConfig::validate(std::int64_t input_points) const {
  if (in_features < 0) throw SpecError("PointNetConfig: in_features must be >= 0");
  if (levels.empty()) throw SpecError("PointNetConfig: at least one level required");
  if (fp_widths.size() != levels.size()) throw SpecError("PointNetConfig: fp_widths size mismatch");
  std::int64_t n = input_points;
  for (const auto& lv : levels) {
    if (lv.n_out < 1 || lv.n_out > n) throw SpecError("PointNetConfig: level sizes must not grow");
    if (lv.k < 1 || lv.k > n) throw SpecError("PointNetConfig: k must be in [1, N]");
    if (lv.mlp_widths.empty()) throw SpecError("PointNetConfig: empty MLP");
    n = lv.n_out;
  }
  if (interpolation_k < 1) throw SpecError("PointNetConfig: interpolation_k must be >= 1");
}

}  // namespace ghostprobe
