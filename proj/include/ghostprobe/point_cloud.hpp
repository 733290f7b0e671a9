#pragma once

#include <cstdint>
#include <vector>

#include "ghostprobe/tensor.hpp"

namespace ghostprobe {

// Batched point set: coords [B,N,3] in meters, feats [B,N,D]. valid_count[b]
// is the number of genuine points before padding.
template <typename T>
struct PointCloud {
  BasicTensor<T> coords;
  BasicTensor<T> feats;
  std::vector<std::int64_t> valid_count;

  std::int64_t batch() const { return coords.dim(0); }
  std::int64_t size() const { return coords.dim(1); }
  std::int64_t feature_width() const { return feats.dim(2); }
};

// Stacks single-sample clouds of equal size along the batch axis.
template <typename T>
PointCloud<T> stack_clouds(const std::vector<const PointCloud<T>*>& clouds) {
  if (clouds.empty()) throw DimensionError("stack_clouds on empty list");
  const auto n = clouds.front()->size();
  const auto d = clouds.front()->feature_width();
  std::vector<T> coords, feats;
  std::vector<std::int64_t> valid;
  for (const auto* c : clouds) {
    if (c->size() != n || c->feature_width() != d) {
      throw DimensionError("stack_clouds: clouds differ in size");
    }
    coords.insert(coords.end(), c->coords.data().begin(), c->coords.data().end());
    feats.insert(feats.end(), c->feats.data().begin(), c->feats.data().end());
    valid.insert(valid.end(), c->valid_count.begin(), c->valid_count.end());
  }
  const auto b = static_cast<std::int64_t>(valid.size());
  return PointCloud<T>{BasicTensor<T>(Shape{b, n, 3}, std::move(coords)),
                       BasicTensor<T>(Shape{b, n, d}, std::move(feats)), std::move(valid)};
}

template <typename T, typename U>
PointCloud<U> cast_cloud(const PointCloud<T>& cloud) {
  return PointCloud<U>{cloud.coords.template cast<U>(), cloud.feats.template cast<U>(),
                       cloud.valid_count};
}

}  // namespace ghostprobe
