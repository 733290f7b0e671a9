#include <gtest/gtest.h>

#include "ghostprobe/detection.hpp"
#include "ghostprobe/gradcheck.hpp"
#include "ghostprobe/layers.hpp"
#include "test_util.hpp"

using namespace ghostprobe;

namespace {

struct PublishedRow {
  const char* method;
  double recall, precision, f1;
};

// Detector comparison, KITTI then CAIC-G; the row without numbers is omitted.
const PublishedRow kComparison[] = {
    {"faster_rcnn_kitti", 0.9333, 0.5060, 0.6562}, {"yolov8_kitti", 0.6778, 0.9104, 0.7771},
    {"rt_detrv2_kitti", 0.9389, 0.8756, 0.9062},   {"ours_kitti", 0.9150, 0.9761, 0.9446},
    {"faster_rcnn_caic", 0.7619, 0.5053, 0.6076},  {"yolov8_caic", 0.7619, 0.8571, 0.8067},
    {"rt_detrv2_caic", 0.9206, 0.7945, 0.8529},    {"ours_caic", 0.9234, 0.8408, 0.8801},
};

std::vector<float> paint(std::int64_t h, std::int64_t w, const std::vector<Box>& boxes, float p) {
  std::vector<float> map(static_cast<std::size_t>(h * w), 0.0f);
  for (const auto& b : boxes)
    for (auto y = static_cast<std::int64_t>(b.y_min); y < static_cast<std::int64_t>(b.y_max); ++y)
      for (auto x = static_cast<std::int64_t>(b.x_min); x < static_cast<std::int64_t>(b.x_max); ++x)
        map[static_cast<std::size_t>(y * w + x)] = p;
  return map;
}

}  // namespace

TEST(Metrics, PublishedF1Identity) {
  for (const auto& row : kComparison) {
    EXPECT_NEAR(f1_score(row.recall, row.precision), row.f1, 5e-4) << row.method;
  }
}

TEST(Metrics, CountIdentities) {
  for (std::int64_t tp = 0; tp < 6; ++tp)
    for (std::int64_t fp = 0; fp < 6; ++fp)
      for (std::int64_t fn = 0; fn < 6; ++fn) {
        const auto r = report_from_counts(tp, fp, fn);
        const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double pre = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        EXPECT_DOUBLE_EQ(r.recall, rec);
        EXPECT_DOUBLE_EQ(r.precision, pre);
        EXPECT_DOUBLE_EQ(r.f1, rec + pre > 0 ? 2 * rec * pre / (rec + pre) : 0.0);
      }
  EXPECT_EQ(report_from_counts(3, 2, 0).recall, 1.0);
  const auto empty = report_from_counts(0, 0, 0);
  EXPECT_EQ(empty.f1, 0.0);
}

TEST(Metrics, ReportsAccumulate) {
  auto a = report_from_counts(2, 1, 0);
  a += report_from_counts(1, 0, 3);
  EXPECT_EQ(a.tp, 3);
  EXPECT_EQ(a.fp, 1);
  EXPECT_EQ(a.fn, 3);
  EXPECT_DOUBLE_EQ(a.recall, 0.5);
  EXPECT_DOUBLE_EQ(a.precision, 0.75);
}

TEST(Iou, HandCases) {
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {1, 0, 3, 2}), 2.0 / 6.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 2, 2}, {2, 0, 4, 2}), 0.0);
  EXPECT_DOUBLE_EQ(iou({1, 1, 5, 5}, {1, 1, 5, 5}), 1.0);
}

TEST(Rasterize, NoBoxesIsEmpty) {
  const auto m = rasterize_annotation(Annotation{"a", {}}, 8, 8);
  for (const float v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Rasterize, FullImageBox) {
  const auto m = rasterize_annotation(Annotation{"a", {{0, 0, 8, 6}}}, 6, 8);
  for (const float v : m.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Rasterize, HalfOpenPixelCount) {
  const auto m = rasterize_annotation(Annotation{"a", {{2, 2, 5, 5}}}, 8, 8);
  float total = 0;
  for (const float v : m.data()) total += v;
  EXPECT_EQ(total, 9.0f);
  EXPECT_EQ(m.at({0, 2, 2}), 1.0f);
  EXPECT_EQ(m.at({0, 4, 4}), 1.0f);
  EXPECT_EQ(m.at({0, 5, 5}), 0.0f);
}

TEST(Rasterize, ScalesFromSourceFrame) {
  const auto m = rasterize_annotation(Annotation{"a", {{32, 64, 64, 128}}}, 8, 8, 128, 128);
  float total = 0;
  for (const float v : m.data()) total += v;
  EXPECT_EQ(total, 8.0f);  // columns 2..3, rows 4..7
  EXPECT_EQ(m.at({0, 4, 2}), 1.0f);
}

TEST(Rasterize, DegenerateBoxDropped) {
  std::vector<Box> dropped;
  const auto m = rasterize_annotation(Annotation{"a", {{10, 10, 11, 40}}}, 8, 8, 128, 128, &dropped);
  ASSERT_EQ(dropped.size(), 1u);
  for (const float v : m.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Postprocess, AllZeroIsEmpty) {
  const std::vector<float> map(64, 0.0f);
  EXPECT_TRUE(postprocess(map, 8, 8).empty());
}

TEST(Postprocess, SolidRectangle) {
  const auto map = paint(10, 12, {{3, 2, 7, 6}}, 0.9f);
  const auto dets = postprocess(map, 10, 12);
  ASSERT_EQ(dets.size(), 1u);
  EXPECT_EQ(dets[0].box, (Box{3, 2, 7, 6}));
  EXPECT_NEAR(dets[0].score, 0.9, 1e-6);
}

TEST(Postprocess, DiagonalBlobsStaySeparate) {
  auto map = paint(8, 8, {{1, 1, 3, 3}, {3, 3, 5, 5}}, 0.8f);
  const auto dets = postprocess(map, 8, 8);
  EXPECT_EQ(dets.size(), 2u);
}

TEST(Postprocess, SortedByScoreAndAreaFiltered) {
  auto map = paint(20, 20, {{0, 0, 4, 4}}, 0.6f);
  const auto hot = paint(20, 20, {{10, 10, 14, 14}}, 0.95f);
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = std::max(map[i], hot[i]);
  map[19 * 20 + 19] = 0.99f;  // isolated pixel, below the area floor
  PostprocessOptions opt;
  opt.min_area_fraction = 0.01;  // 4 pixels
  const auto dets = postprocess(map, 20, 20, opt);
  ASSERT_EQ(dets.size(), 2u);
  EXPECT_EQ(dets[0].box, (Box{10, 10, 14, 14}));
  EXPECT_EQ(dets[1].box, (Box{0, 0, 4, 4}));
}

TEST(Postprocess, RecoversRasterizedDisjointBoxes) {
  Rng rng(81);
  for (int t = 0; t < 50; ++t) {
    std::vector<Box> boxes;
    // boxes on a coarse grid so they are never adjacent
    for (int gy = 0; gy < 3; ++gy)
      for (int gx = 0; gx < 3; ++gx) {
        if (rng.uniform() < 0.5) continue;
        const double x0 = gx * 10 + static_cast<double>(rng.below(3));
        const double y0 = gy * 10 + static_cast<double>(rng.below(3));
        boxes.push_back({x0, y0, x0 + 2 + static_cast<double>(rng.below(6)), y0 + 2 + static_cast<double>(rng.below(6))});
      }
    const auto mask = rasterize_annotation(Annotation{"r", boxes}, 30, 30);
    const auto dets = postprocess(mask.data(), 30, 30);
    ASSERT_EQ(dets.size(), boxes.size());
    for (const auto& b : boxes) {
      EXPECT_TRUE(std::any_of(dets.begin(), dets.end(), [&](const Detection& d) { return d.box == b; }));
    }
  }
}

TEST(Match, PerfectDetections) {
  const Annotation truth{"a", {{0, 0, 4, 4}, {10, 10, 20, 20}}};
  std::vector<Detection> dets;
  for (const auto& b : truth.boxes) dets.push_back({b, 1.0});
  const auto r = match_and_score(dets, truth);
  EXPECT_EQ(r.tp, 2);
  EXPECT_EQ(r.f1, 1.0);
}

TEST(Match, GreedyByScoreConsumesTruth) {
  const Annotation truth{"a", {{0, 0, 10, 10}}};
  const std::vector<Detection> dets{{{0, 0, 9, 10}, 0.6}, {{0, 0, 10, 10}, 0.9}, {{50, 50, 60, 60}, 0.7}};
  const auto r = match_and_score(dets, truth);
  EXPECT_EQ(r.tp, 1);
  EXPECT_EQ(r.fp, 2);
  EXPECT_EQ(r.fn, 0);
}

TEST(Match, IouThresholdRespected) {
  const Annotation truth{"a", {{0, 0, 10, 10}}};
  const std::vector<Detection> dets{{{5, 0, 15, 10}, 0.9}};  // IoU 1/3
  EXPECT_EQ(match_and_score(dets, truth, 0.5).tp, 0);
  EXPECT_EQ(match_and_score(dets, truth, 0.3).tp, 1);
}

TEST(Head, ZeroWeightsGiveHalf) {
  const ConvLayer<float> head{Tensor::zeros(Shape{1, 3, 1, 1}), Tensor::zeros(Shape{1}), 1, 0};
  Rng rng(82);
  const auto p = head_forward(test::random_tensor<float>(Shape{1, 3, 4, 4}, rng), head);
  EXPECT_EQ(p.shape(), (Shape{1, 1, 4, 4}));
  for (const float v : p.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Head, LargeNegativeBiasSaturates) {
  const ConvLayer<float> head{Tensor::zeros(Shape{1, 2, 1, 1}), Tensor::full(Shape{1}, -40.0f), 1, 0};
  const auto p = head_forward(Tensor::full(Shape{1, 2, 3, 3}, 1.0f), head);
  for (const float v : p.data()) EXPECT_LT(v, 1e-12f);
}

TEST(Head, GradientCheck) {
  Rng rng(83);
  auto head = make_conv<double>(3, 1, 1, rng);
  const auto x = test::random_tensor<double>(Shape{1, 3, 4, 4}, rng, 1.0, true);
  const auto r = test::random_tensor<double>(Shape{1, 1, 4, 4}, rng);
  const auto res = check_gradients(
      "head", [&] { return sum(mul(head_forward(x, head), r)); }, {x, head.weight, head.bias},
      GradcheckOptions{1e-5, 1e-4, 1e-3, 0});
  EXPECT_TRUE(res.passed) << res.max_rel_error;
}
