#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "ghostprobe/errors.hpp"

namespace ghostprobe {

template <typename T>
double squared_distance(std::span<const T> a_xyz, std::int64_t i, std::span<const T> b_xyz,
                        std::int64_t j) {
  double acc = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double d = static_cast<double>(a_xyz[static_cast<std::size_t>(3 * i + c)]) -
                     static_cast<double>(b_xyz[static_cast<std::size_t>(3 * j + c)]);
    acc += d * d;
  }
  return acc;
}

// Greedy maximin subsampling of one cloud (xyz holds n_points * 3 values).
// First pick is start_index; each next pick maximizes the distance to the
// picked set, ties going to the lowest index.
template <typename T>
std::vector<std::int64_t> farthest_point_sample(std::span<const T> xyz, std::int64_t n_out,
                                                std::int64_t start_index = 0) {
  const auto n = static_cast<std::int64_t>(xyz.size() / 3);
  if (n_out < 1 || n_out > n) {
    throw DimensionError("farthest_point_sample: n_out=" + std::to_string(n_out) +
                         " with N=" + std::to_string(n));
  }
  if (start_index < 0 || start_index >= n) throw DimensionError("FPS start index out of range");
  std::vector<double> nearest(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  std::vector<char> picked(static_cast<std::size_t>(n), 0);
  std::vector<std::int64_t> picks;
  picks.reserve(static_cast<std::size_t>(n_out));
  std::int64_t current = start_index;
  for (std::int64_t s = 0; s < n_out; ++s) {
    picks.push_back(current);
    picked[static_cast<std::size_t>(current)] = 1;
    std::int64_t best = -1;
    double best_dist = -1.0;
    for (std::int64_t i = 0; i < n; ++i) {
      auto& d = nearest[static_cast<std::size_t>(i)];
      d = std::min(d, squared_distance(xyz, i, xyz, current));
      // Duplicated points sit at distance 0; never re-pick an index.
      if (!picked[static_cast<std::size_t>(i)] && d > best_dist) {
        best_dist = d;
        best = i;
      }
    }
    current = best;
  }
  return picks;
}

// For each query, the k nearest points by Euclidean distance, ties to the
// lowest index. Result is queries x k, nearest first.
template <typename T>
std::vector<std::int64_t> k_nearest(std::span<const T> points_xyz, std::span<const T> queries_xyz,
                                    std::int64_t k) {
  const auto n = static_cast<std::int64_t>(points_xyz.size() / 3);
  const auto m = static_cast<std::int64_t>(queries_xyz.size() / 3);
  if (k < 1 || k > n) {
    throw DimensionError("k_nearest: k=" + std::to_string(k) + " with N=" + std::to_string(n));
  }
  std::vector<std::int64_t> out(static_cast<std::size_t>(m * k));
  std::vector<std::pair<double, std::int64_t>> cand(static_cast<std::size_t>(n));
  for (std::int64_t q = 0; q < m; ++q) {
    for (std::int64_t i = 0; i < n; ++i) {
      cand[static_cast<std::size_t>(i)] = {squared_distance(points_xyz, i, queries_xyz, q), i};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (std::int64_t j = 0; j < k; ++j) {
      out[static_cast<std::size_t>(q * k + j)] = cand[static_cast<std::size_t>(j)].second;
    }
  }
  return out;
}

}  // namespace ghostprobe
