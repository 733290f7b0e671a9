#include "ghostprobe/detection.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace ghostprobe {

EvalReport& EvalReport::operator+=(const EvalReport& other) {
  *this = report_from_counts(tp + other.tp, fp + other.fp, fn + other.fn);
  return *this;
}

EvalReport report_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn) {
  EvalReport r{tp, fp, fn, 0.0, 0.0, 0.0};
  if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.f1 = f1_score(r.recall, r.precision);
  return r;
}

double f1_score(double recall, double precision) {
  const double denom = recall + precision;
  return denom > 0.0 ? 2.0 * recall * precision / denom : 0.0;
}

double iou(const Box& a, const Box& b) {
  const double ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min);
  const double iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

Tensor rasterize_annotation(const Annotation& ann, std::int64_t h, std::int64_t w,
                            double source_width, double source_height, std::vector<Box>* dropped) {
  if (h < 1 || w < 1) throw DimensionError("rasterize_annotation: empty mask");
  const double sx = static_cast<double>(w) / source_width;
  const double sy = static_cast<double>(h) / source_height;
  std::vector<float> mask(static_cast<std::size_t>(h * w), 0.0f);
  auto to_pixel = [](double v, std::int64_t limit) {
    return std::clamp(static_cast<std::int64_t>(std::floor(v + 0.5)), std::int64_t{0}, limit);
  };
  for (const auto& box : ann.boxes) {
    const auto x0 = to_pixel(box.x_min * sx, w), x1 = to_pixel(box.x_max * sx, w);
    const auto y0 = to_pixel(box.y_min * sy, h), y1 = to_pixel(box.y_max * sy, h);
    if (x0 >= x1 || y0 >= y1) {
      std::cerr << "warning: dropping degenerate box in " << ann.sample_id << " after scaling\n";
      if (dropped) dropped->push_back(box);
      continue;
    }
    for (auto y = y0; y < y1; ++y) {
      std::fill(mask.begin() + y * w + x0, mask.begin() + y * w + x1, 1.0f);
    }
  }
  return Tensor(Shape{1, h, w}, std::move(mask));
}

std::vector<Detection> postprocess(std::span<const float> prob_map, std::int64_t height,
                                   std::int64_t width, const PostprocessOptions& options) {
  if (static_cast<std::int64_t>(prob_map.size()) != height * width) {
    throw DimensionError("postprocess: map size does not match extents");
  }
  const double min_pixels = options.min_area_fraction * static_cast<double>(height * width);
  std::vector<std::int32_t> label(prob_map.size(), -1);
  std::vector<Detection> dets;
  std::vector<std::int64_t> queue;
  std::int32_t next_label = 0;
  for (std::int64_t start = 0; start < height * width; ++start) {
    if (label[static_cast<std::size_t>(start)] >= 0 ||
        !(prob_map[static_cast<std::size_t>(start)] > options.threshold)) {
      continue;
    }
    queue.assign(1, start);
    label[static_cast<std::size_t>(start)] = next_label;
    std::int64_t x0 = width, y0 = height, x1 = -1, y1 = -1, count = 0;
    double total = 0.0;
    for (std::size_t head = 0; head < queue.size(); ++head) {
      const auto p = queue[head];
      const auto y = p / width, x = p % width;
      x0 = std::min(x0, x);
      x1 = std::max(x1, x);
      y0 = std::min(y0, y);
      y1 = std::max(y1, y);
      total += prob_map[static_cast<std::size_t>(p)];
      ++count;
      const std::int64_t nbrs[4][2] = {{x - 1, y}, {x + 1, y}, {x, y - 1}, {x, y + 1}};
      for (const auto& nb : nbrs) {
        if (nb[0] < 0 || nb[0] >= width || nb[1] < 0 || nb[1] >= height) continue;
        const auto q = nb[1] * width + nb[0];
        auto& lq = label[static_cast<std::size_t>(q)];
        if (lq < 0 && prob_map[static_cast<std::size_t>(q)] > options.threshold) {
          lq = next_label;
          queue.push_back(q);
        }
      }
    }
    ++next_label;
    if (static_cast<double>(count) < min_pixels) continue;
    dets.push_back({Box{static_cast<double>(x0), static_cast<double>(y0),
                        static_cast<double>(x1 + 1), static_cast<double>(y1 + 1)},
                    total / static_cast<double>(count)});
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return dets;
}

EvalReport match_and_score(const std::vector<Detection>& detections, const Annotation& truth,
                           double iou_threshold) {
  std::vector<const Detection*> order;
  for (const auto& d : detections) order.push_back(&d);
  std::stable_sort(order.begin(), order.end(),
                   [](const Detection* a, const Detection* b) { return a->score > b->score; });
  std::vector<char> used(truth.boxes.size(), 0);
  std::int64_t tp = 0, fp = 0;
  for (const auto* det : order) {
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t g = 0; g < truth.boxes.size(); ++g) {
      if (used[g]) continue;
      const double v = iou(det->box, truth.boxes[g]);
      if (v > best) {
        best = v;
        best_idx = g;
      }
    }
    if (best >= iou_threshold) {
      used[best_idx] = 1;
      ++tp;
    } else {
      ++fp;
    }
  }
  const auto fn = static_cast<std::int64_t>(std::count(used.begin(), used.end(), 0));
  return report_from_counts(tp, fp, fn);
}

}  // namespace ghostprobe
