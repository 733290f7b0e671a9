#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ghostprobe/ops.hpp"

namespace ghostprobe {

// Axis-aligned box in pixels, half-open: columns [x_min, x_max), rows [y_min, y_max).
struct Box {
  double x_min = 0;
  double y_min = 0;
  double x_max = 0;
  double y_max = 0;

  double area() const { return std::max(0.0, x_max - x_min) * std::max(0.0, y_max - y_min); }
  bool valid() const { return x_min < x_max && y_min < y_max; }
  bool operator==(const Box&) const = default;
};

struct Annotation {
  std::string sample_id;
  std::vector<Box> boxes;
};

struct Detection {
  Box box;
  double score = 0.0;
};

struct EvalReport {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;

  EvalReport& operator+=(const EvalReport& other);
};

// Recall, precision and F1 from counts; zero denominators yield 0.
EvalReport report_from_counts(std::int64_t tp, std::int64_t fp, std::int64_t fn);

double f1_score(double recall, double precision);

double iou(const Box& a, const Box& b);

// Binary mask [1,h,w]. Boxes are given in a source_width x source_height frame
// and scaled to h x w; a pixel is set when its index lies in the scaled
// half-open range after rounding the bounds. Boxes that collapse are dropped
// (reported through `dropped` when given).
Tensor rasterize_annotation(const Annotation& ann, std::int64_t h, std::int64_t w,
                            double source_width, double source_height,
                            std::vector<Box>* dropped = nullptr);

inline Tensor rasterize_annotation(const Annotation& ann, std::int64_t h, std::int64_t w) {
  return rasterize_annotation(ann, h, w, static_cast<double>(w), static_cast<double>(h));
}

struct PostprocessOptions {
  double threshold = 0.5;
  double min_area_fraction = 0.001;
};

// prob_map is [H,W] row-major. Thresholds, labels 4-connected components,
// keeps components covering at least min_area_fraction of the image and
// returns their tight boxes scored by mean probability, best first.
std::vector<Detection> postprocess(std::span<const float> prob_map, std::int64_t height,
                                   std::int64_t width, const PostprocessOptions& options = {});

// Greedy matching in descending score order against unmatched ground truth.
EvalReport match_and_score(const std::vector<Detection>& detections, const Annotation& truth,
                           double iou_threshold = 0.5);

// 1x1 convolution followed by the logistic function.
template <typename T>
BasicTensor<T> head_forward(const BasicTensor<T>& fused, const ConvLayer<T>& head) {
  return sigmoid(conv2d(fused, head));
}

}  // namespace ghostprobe
