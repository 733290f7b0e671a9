#include "ghostprobe/overlay.hpp"

#include <algorithm>
#include <cmath>

namespace ghostprobe {

namespace {

void outline(RgbImage& img, const Box& b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
  const int x0 = std::clamp(static_cast<int>(std::floor(b.x_min)), 0, img.width - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil(b.x_max)) - 1, 0, img.width - 1);
  const int y0 = std::clamp(static_cast<int>(std::floor(b.y_min)), 0, img.height - 1);
  const int y1 = std::clamp(static_cast<int>(std::ceil(b.y_max)) - 1, 0, img.height - 1);
  auto put = [&](int x, int y) {
    auto* p = &img.values[static_cast<std::size_t>((y * img.width + x) * 3)];
    p[0] = r;
    p[1] = g;
    p[2] = bl;
  };
  for (int x = x0; x <= x1; ++x) {
    put(x, y0);
    put(x, y1);
  }
  for (int y = y0; y <= y1; ++y) {
    put(x0, y);
    put(x1, y);
  }
}

}  // namespace

RgbImage render_overlay(const DepthFrame& frame, std::span<const float> prob, int prob_w, int prob_h,
                        const std::vector<Box>& truth, const std::vector<Detection>& detections) {
  const int w = frame.width(), h = frame.height();
  if (static_cast<int>(prob.size()) != prob_w * prob_h) throw DimensionError("render_overlay: bad map size");
  std::vector<float> blended(frame.rgb);
  for (int y = 0; y < h; ++y) {
    const int py = std::min(prob_h - 1, static_cast<int>((y + 0.5) * prob_h / h));
    for (int x = 0; x < w; ++x) {
      const int px = std::min(prob_w - 1, static_cast<int>((x + 0.5) * prob_w / w));
      const float p = std::clamp(prob[static_cast<std::size_t>(py * prob_w + px)], 0.0f, 1.0f);
      const float a = 0.5f * p;
      // heat runs from red at low probability to yellow at high
      const float heat[3] = {1.0f, p, 0.0f};
      for (int c = 0; c < 3; ++c) {
        auto& v = blended[static_cast<std::size_t>((y * w + x) * 3 + c)];
        v = (1.0f - a) * v + a * heat[c];
      }
    }
  }
  auto img = to_rgb8(blended, w, h);
  for (const auto& b : truth) outline(img, b, 255, 0, 0);
  for (const auto& d : detections) outline(img, d.box, 0, 255, 0);
  return img;
}

}  // namespace ghostprobe
