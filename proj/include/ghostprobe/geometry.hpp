#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ghostprobe/point_cloud.hpp"

namespace ghostprobe {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  // Throws SpecError unless fx, fy > 0 and the principal point lies in the frame.
  void validate() const;
};

// Registered depth (meters, 0 = invalid) and RGB in [0,1], both row-major H x W
// (RGB interleaved, H x W x 3).
struct DepthFrame {
  std::vector<float> depth;
  std::vector<float> rgb;
  CameraIntrinsics intrinsics;
  std::string sample_id;

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }
  bool valid(int u, int v) const { return depth[static_cast<std::size_t>(v * width() + u)] > 0.0f; }
  void validate() const;
};

struct GradientMap {
  int width = 0;
  int height = 0;
  std::vector<float> magnitude;  // normalized to [0,1]
  double raw_max = 0.0;          // clip value (99th percentile) in meters per pixel units
};

inline constexpr double kGradientClipPercentile = 0.99;

// Unnormalized Scharr magnitude sqrt(Gx^2 + Gy^2) with replicate borders.
// Pixels whose 3x3 neighborhood touches invalid depth are 0.
std::vector<double> scharr_magnitude_raw(const DepthFrame& frame);

// Raw magnitude clipped at its 99th percentile and scaled to [0,1].
GradientMap scharr_gradient(const DepthFrame& frame);

// Back-projects every valid pixel through the pinhole model; features are the
// pixel's RGB. Clouds larger than max_points are reduced with farthest point
// sampling, smaller ones are padded by repeating the last point.
PointCloud<float> backproject(const DepthFrame& frame, std::int64_t max_points);

struct PixelDepth {
  double u = 0.0;
  double v = 0.0;
  double depth = 0.0;
};

PixelDepth project(const CameraIntrinsics& k, double x, double y, double z);

}  // namespace ghostprobe
