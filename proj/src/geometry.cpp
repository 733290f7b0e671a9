#include "ghostprobe/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "ghostprobe/sampling.hpp"

namespace ghostprobe {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw SpecError("intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) throw SpecError("intrinsics: image extents must be positive");
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw SpecError("intrinsics: principal point outside the image");
  }
}

void DepthFrame::validate() const {
  intrinsics.validate();
  const auto pixels = static_cast<std::size_t>(width()) * static_cast<std::size_t>(height());
  if (depth.size() != pixels || rgb.size() != 3 * pixels) {
    throw DimensionError("depth frame buffers do not match intrinsics extents");
  }
  for (const float d : depth) {
    if (!std::isfinite(d) || d < 0.0f) throw DomainError("depth must be finite and >= 0");
  }
  for (const float c : rgb) {
    if (!(c >= 0.0f && c <= 1.0f)) throw DomainError("rgb values must lie in [0,1]");
  }
}

std::vector<double> scharr_magnitude_raw(const DepthFrame& frame) {
  const int w = frame.width(), h = frame.height();
  if (w < 3 || h < 3) throw DimensionError("scharr_gradient requires at least 3x3 pixels");
  if (frame.depth.size() != static_cast<std::size_t>(w) * static_cast<std::size_t>(h)) {
    throw DimensionError("depth buffer does not match intrinsics");
  }
  auto at = [&](int u, int v) {
    u = std::clamp(u, 0, w - 1);
    v = std::clamp(v, 0, h - 1);
    return static_cast<double>(frame.depth[static_cast<std::size_t>(v * w + u)]);
  };
  static constexpr double kSmooth[3] = {3.0, 10.0, 3.0};
  std::vector<double> out(static_cast<std::size_t>(w * h), 0.0);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      bool touches_invalid = false;
      for (int dv = -1; dv <= 1 && !touches_invalid; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          if (at(u + du, v + dv) <= 0.0) {
            touches_invalid = true;
            break;
          }
        }
      }
      if (touches_invalid) continue;
      double gx = 0.0, gy = 0.0;
      for (int t = -1; t <= 1; ++t) {
        gx += kSmooth[t + 1] * (at(u + 1, v + t) - at(u - 1, v + t));
        gy += kSmooth[t + 1] * (at(u + t, v + 1) - at(u + t, v - 1));
      }
      out[static_cast<std::size_t>(v * w + u)] = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

GradientMap scharr_gradient(const DepthFrame& frame) {
  const auto raw = scharr_magnitude_raw(frame);
  std::vector<double> sorted = raw;
  // Nearest-rank percentile.
  const auto rank = static_cast<std::size_t>(
      std::ceil(kGradientClipPercentile * static_cast<double>(sorted.size())));
  const auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(rank, 1) - 1);
  std::nth_element(sorted.begin(), nth, sorted.end());
  const double clip = *nth;

  GradientMap map;
  map.width = frame.width();
  map.height = frame.height();
  map.raw_max = clip;
  map.magnitude.resize(raw.size(), 0.0f);
  if (clip > 0.0) {
    for (std::size_t i = 0; i < raw.size(); ++i) {
      map.magnitude[i] = static_cast<float>(std::min(raw[i], clip) / clip);
    }
  }
  return map;
}

PointCloud<float> backproject(const DepthFrame& frame, std::int64_t max_points) {
  if (max_points < 1) throw DimensionError("backproject: max_points must be >= 1");
  const auto& k = frame.intrinsics;
  k.validate();
  std::vector<float> xyz, rgb;
  for (int v = 0; v < frame.height(); ++v) {
    for (int u = 0; u < frame.width(); ++u) {
      const auto idx = static_cast<std::size_t>(v * frame.width() + u);
      const double d = frame.depth[idx];
      if (!(d > 0.0)) continue;
      xyz.push_back(static_cast<float>((u - k.cx) * d / k.fx));
      xyz.push_back(static_cast<float>((v - k.cy) * d / k.fy));
      xyz.push_back(static_cast<float>(d));
      for (int c = 0; c < 3; ++c) rgb.push_back(frame.rgb[3 * idx + static_cast<std::size_t>(c)]);
    }
  }
  const auto valid = static_cast<std::int64_t>(xyz.size() / 3);
  if (valid == 0) throw EmptyCloudError("backproject: frame " + frame.sample_id + " has no valid depth");

  std::vector<float> out_xyz, out_rgb;
  std::int64_t kept = valid;
  if (valid > max_points) {
    const auto picks = farthest_point_sample<float>(xyz, max_points, 0);
    for (const auto p : picks) {
      const auto base = static_cast<std::size_t>(3 * p);
      out_xyz.insert(out_xyz.end(), xyz.begin() + static_cast<std::ptrdiff_t>(base),
                     xyz.begin() + static_cast<std::ptrdiff_t>(base + 3));
      out_rgb.insert(out_rgb.end(), rgb.begin() + static_cast<std::ptrdiff_t>(base),
                     rgb.begin() + static_cast<std::ptrdiff_t>(base + 3));
    }
    kept = max_points;
  } else {
    out_xyz = std::move(xyz);
    out_rgb = std::move(rgb);
    while (static_cast<std::int64_t>(out_xyz.size() / 3) < max_points) {
      const auto last = out_xyz.size() - 3;
      for (int c = 0; c < 3; ++c) {
        out_xyz.push_back(out_xyz[last + static_cast<std::size_t>(c)]);
        out_rgb.push_back(out_rgb[last + static_cast<std::size_t>(c)]);
      }
    }
  }
  return PointCloud<float>{Tensor(Shape{1, max_points, 3}, std::move(out_xyz)),
                           Tensor(Shape{1, max_points, 3}, std::move(out_rgb)), {kept}};
}

PixelDepth project(const CameraIntrinsics& k, double x, double y, double z) {
  if (!(z > 0.0)) throw DomainError("project: point behind the camera");
  return PixelDepth{k.fx * x / z + k.cx, k.fy * y / z + k.cy, z};
}

}  // namespace ghostprobe
