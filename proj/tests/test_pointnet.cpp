#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ghostprobe/gradcheck.hpp"
#include "ghostprobe/pointnet.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ghostprobe;
using namespace ghostprobe::test;

TEST(Fps, Singleton) {
  const std::vector<double> xyz{1, 2, 3};
  EXPECT_EQ(farthest_point_sample<double>(xyz, 1), (std::vector<std::int64_t>{0}));
}

TEST(Fps, HandCase) {
  const std::vector<double> xyz{0, 0, 0, 10, 0, 0, 5, 0, 0};
  EXPECT_EQ(farthest_point_sample<double>(xyz, 2), (std::vector<std::int64_t>{0, 1}));
}

TEST(Fps, FullSampleIsPermutation) {
  Rng rng(51);
  const auto xyz = random_xyz(rng, 17);
  auto picks = farthest_point_sample<double>(xyz, 17);
  std::sort(picks.begin(), picks.end());
  for (std::int64_t i = 0; i < 17; ++i) EXPECT_EQ(picks[static_cast<std::size_t>(i)], i);
}

TEST(Fps, TooManyThrows) {
  const std::vector<double> xyz{0, 0, 0, 1, 1, 1};
  EXPECT_THROW(farthest_point_sample<double>(xyz, 3), DimensionError);
}

TEST(Fps, MatchesBruteForceOn100Clouds) {
  Rng rng(52);
  for (int t = 0; t < 100; ++t) {
    const int n = 2 + static_cast<int>(rng.below(63));
    auto xyz = random_xyz(rng, n);
    if (t % 5 == 0) {  // integer grid coordinates exercise tie-breaking
      for (auto& v : xyz) v = std::round(v / 2.0);
    }
    const auto n_out = 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    EXPECT_EQ(farthest_point_sample<double>(xyz, n_out), maximin_oracle(xyz, n_out)) << "cloud " << t;
  }
}

TEST(Knn, SelfNeighbor) {
  const std::vector<double> xyz{0, 0, 0, 1, 0, 0, 3, 0, 0};
  const auto cloud = make_cloud(xyz, {7, 8, 9}, 1);
  const Tensor64 cen(Shape{1, 1, 3}, {1, 0, 0});
  const auto g = knn_group(cloud, cen, 1);
  EXPECT_EQ(g.shape(), (Shape{1, 1, 1, 4}));
  EXPECT_EQ(test::to_vec(g), (std::vector<double>{0, 0, 0, 8}));
}

TEST(Knn, CollinearMiddle) {
  const std::vector<double> xyz{0, 0, 0, 1, 0, 0, 2, 0, 0, 3, 0, 0, 4, 0, 0};
  auto idx = k_nearest<double>(xyz, std::vector<double>{2, 0, 0}, 3);
  std::sort(idx.begin(), idx.end());
  EXPECT_EQ(idx, (std::vector<std::int64_t>{1, 2, 3}));
}

TEST(Knn, LocalCoordinatesRecoverGlobal) {
  Rng rng(53);
  auto xyz = random_xyz(rng, 20);
  for (auto& v : xyz) v = std::round(v * 8.0) / 8.0;  // dyadic, so the subtraction is exact
  const auto cloud = make_cloud(xyz, std::vector<double>(20, 0.0), 1);
  const Tensor64 cen(Shape{1, 2, 3}, {xyz[0], xyz[1], xyz[2], xyz[30], xyz[31], xyz[32]});
  const auto g = knn_group(cloud, cen, 4);
  const auto idx = knn_indices(cloud.coords, cen, 4);
  for (int c = 0; c < 2; ++c)
    for (int j = 0; j < 4; ++j) {
      const auto p = idx[static_cast<std::size_t>(c * 4 + j)];
      for (int a = 0; a < 3; ++a) {
        EXPECT_EQ(g.at({0, c, j, a}) + cen.at({0, c, a}), xyz[static_cast<std::size_t>(3 * p + a)]);
      }
    }
}

TEST(Knn, KLargerThanCloudThrows) {
  const auto cloud = make_cloud({0, 0, 0, 1, 1, 1}, {0, 0}, 1);
  EXPECT_THROW(knn_group(cloud, Tensor64(Shape{1, 1, 3}, {0, 0, 0}), 3), DimensionError);
}

TEST(SetAbstraction, IdenticalPointsGiveIdenticalFeatures) {
  Rng rng(54);
  std::vector<double> xyz, feats;
  for (int i = 0; i < 12; ++i) {
    xyz.insert(xyz.end(), {1.0, 2.0, 3.0});
    feats.insert(feats.end(), {0.2, 0.4, 0.6});
  }
  const SALevelConfig cfg{4, 3, {5, 6}};
  const auto out = set_abstraction(make_cloud(xyz, feats, 3), cfg, make_mlp(6, cfg.mlp_widths, rng));
  for (int c = 1; c < 4; ++c)
    for (int f = 0; f < 6; ++f) EXPECT_EQ(out.feats.at({0, c, f}), out.feats.at({0, 0, f}));
}

TEST(SetAbstraction, MatchesDirectLoopOracle) {
  Rng rng(55);
  for (int t = 0; t < 20; ++t) {
    const int n = t == 0 ? 64 : 8 + static_cast<int>(rng.below(57));
    const std::int64_t d = static_cast<std::int64_t>(rng.below(4));
    const auto xyz = random_xyz(rng, n);
    std::vector<double> feats;
    for (int i = 0; i < n * d; ++i) feats.push_back(rng.uniform(0, 1));
    const SALevelConfig cfg{t == 0 ? 16 : 1 + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))),
                            1 + static_cast<std::int64_t>(rng.below(8)), {4, 7}};
    const auto mlp = make_mlp(3 + d, cfg.mlp_widths, rng);
    const auto out = set_abstraction(make_cloud(xyz, feats, d), cfg, mlp);
    const auto ref = sa_oracle(xyz, feats, d, cfg, mlp);
    ASSERT_EQ(out.feats.numel(), static_cast<std::int64_t>(ref.size()));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(out.feats.data()[i], ref[i], 1e-5) << "config " << t;
  }
}

TEST(SetAbstraction, InvariantToPermutationFixingFirstPoint) {
  Rng rng(56);
  auto xyz = random_xyz(rng, 24);
  std::vector<double> feats;
  for (int i = 0; i < 24 * 2; ++i) feats.push_back(rng.uniform(0, 1));
  const SALevelConfig cfg{6, 4, {5}};
  const auto mlp = make_mlp(5, cfg.mlp_widths, rng);
  const auto a = set_abstraction(make_cloud(xyz, feats, 2), cfg, mlp);
  // reverse points 1..23
  std::vector<double> xyz2(xyz.begin(), xyz.begin() + 3), f2(feats.begin(), feats.begin() + 2);
  for (int i = 23; i >= 1; --i) {
    xyz2.insert(xyz2.end(), xyz.begin() + 3 * i, xyz.begin() + 3 * i + 3);
    f2.insert(f2.end(), feats.begin() + 2 * i, feats.begin() + 2 * i + 2);
  }
  const auto b = set_abstraction(make_cloud(xyz2, f2, 2), cfg, mlp);
  EXPECT_EQ(test::to_vec(a.coords), test::to_vec(b.coords));
  for (std::size_t i = 0; i < a.feats.data().size(); ++i) EXPECT_NEAR(a.feats.data()[i], b.feats.data()[i], 1e-12);
}

TEST(Interpolation, EquidistantWeightsAreHalf) {
  const Tensor64 target(Shape{1, 1, 3}, {0, 0, 0});
  const Tensor64 src(Shape{1, 2, 3}, {1, 0, 0, -1, 0, 0});
  std::vector<std::int64_t> idx;
  std::vector<double> w;
  interpolation_weights(target, src, 2, idx, w);
  EXPECT_NEAR(w[0], 0.5, 1e-15);
  EXPECT_NEAR(w[1], 0.5, 1e-15);
}

TEST(Interpolation, DistancesOneAndThree) {
  const Tensor64 target(Shape{1, 1, 3}, {0, 0, 0});
  const Tensor64 src(Shape{1, 2, 3}, {0, 3, 0, 1, 0, 0});
  const Tensor64 feats(Shape{1, 2, 1}, {10, 2});
  std::vector<std::int64_t> idx;
  std::vector<double> w;
  interpolation_weights(target, src, 2, idx, w);
  ASSERT_EQ(idx, (std::vector<std::int64_t>{1, 0}));
  EXPECT_NEAR(w[0], 0.75, 1e-12);
  EXPECT_NEAR(w[1], 0.25, 1e-12);
  EXPECT_NEAR(interpolate_features(target, src, feats, 2).item(), 0.75 * 2 + 0.25 * 10, 1e-12);
}

TEST(Interpolation, CoincidentPointCollapses) {
  const Tensor64 target(Shape{1, 1, 3}, {1, 2, 3});
  const Tensor64 src(Shape{1, 3, 3}, {0, 0, 0, 1, 2, 3, 2, 2, 2});
  const Tensor64 feats(Shape{1, 3, 2}, {5, 6, 0.123456789, -7.5, 9, 9});
  const auto out = interpolate_features(target, src, feats, 3);
  EXPECT_EQ(out.at({0, 0, 0}), 0.123456789);
  EXPECT_EQ(out.at({0, 0, 1}), -7.5);
}

TEST(Interpolation, WeightsAreConvexAndConstantsExact) {
  Rng rng(57);
  const auto src_xyz = random_xyz(rng, 10), tgt_xyz = random_xyz(rng, 30);
  const Tensor64 src(Shape{1, 10, 3}, src_xyz), tgt(Shape{1, 30, 3}, tgt_xyz);
  std::vector<std::int64_t> idx;
  std::vector<double> w;
  interpolation_weights(tgt, src, 3, idx, w);
  for (int t = 0; t < 30; ++t) {
    double s = 0;
    for (int j = 0; j < 3; ++j) {
      EXPECT_GE(w[static_cast<std::size_t>(3 * t + j)], 0.0);
      s += w[static_cast<std::size_t>(3 * t + j)];
    }
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
  const auto out = interpolate_features(tgt, src, Tensor64::full(Shape{1, 10, 2}, 4.25), 3);
  for (const double v : out.data()) EXPECT_NEAR(v, 4.25, 1e-12);
}

TEST(Interpolation, KTooLargeThrows) {
  const Tensor64 src(Shape{1, 2, 3}, {0, 0, 0, 1, 1, 1});
  EXPECT_THROW(interpolate_features(Tensor64::zeros(Shape{1, 1, 3}), src, Tensor64::zeros(Shape{1, 2, 1}), 3),
               DimensionError);
}

TEST(FeaturePropagation, ZeroFeaturesGiveZero) {
  Rng rng(58);
  const auto fine = make_cloud(random_xyz(rng, 8), std::vector<double>(16, 0.0), 2);
  auto layer = make_linear<double>(3 + 2, 4, rng);
  const auto out = propagate_level(fine, Tensor64(Shape{1, 2, 3}, random_xyz(rng, 2)),
                                   Tensor64::zeros(Shape{1, 2, 3}), layer, 3);
  EXPECT_EQ(out.shape(), (Shape{1, 8, 4}));
  for (const double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(FeaturePropagation, TwoLevelToyMatchesOracle) {
  Rng rng(59);
  const auto fine_xyz = random_xyz(rng, 6), coarse_xyz = random_xyz(rng, 3);
  std::vector<double> fine_f, coarse_f;
  for (int i = 0; i < 6 * 2; ++i) fine_f.push_back(rng.normal());
  for (int i = 0; i < 3 * 4; ++i) coarse_f.push_back(rng.normal());
  const auto fine = make_cloud(fine_xyz, fine_f, 2);
  auto layer = make_linear<double>(4 + 2, 3, rng);
  for (auto& b : layer.bias.mutable_data()) b = rng.normal();
  const auto out = propagate_level(fine, Tensor64(Shape{1, 3, 3}, coarse_xyz), Tensor64(Shape{1, 3, 4}, coarse_f), layer, 3);
  for (int p = 0; p < 6; ++p) {
    // inverse-distance interpolation over all three coarse points
    double wsum = 0;
    std::vector<double> up(4, 0.0);
    for (int c = 0; c < 3; ++c) {
      double d = 0;
      for (int a = 0; a < 3; ++a) d += std::pow(fine_xyz[static_cast<std::size_t>(3 * p + a)] - coarse_xyz[static_cast<std::size_t>(3 * c + a)], 2);
      const double inv = 1.0 / std::sqrt(d);
      wsum += inv;
      for (int f = 0; f < 4; ++f) up[static_cast<std::size_t>(f)] += inv * coarse_f[static_cast<std::size_t>(4 * c + f)];
    }
    std::vector<double> cat;
    for (const double u : up) cat.push_back(u / wsum);
    cat.push_back(fine_f[static_cast<std::size_t>(2 * p)]);
    cat.push_back(fine_f[static_cast<std::size_t>(2 * p + 1)]);
    for (int o = 0; o < 3; ++o) {
      double acc = layer.bias.at({o});
      for (int i = 0; i < 6; ++i) acc += cat[static_cast<std::size_t>(i)] * layer.weight.at({i, o});
      EXPECT_NEAR(out.at({0, p, o}), std::max(acc, 0.0), 1e-5);
    }
  }
}

TEST(PointNet, ConcatWidthBookkeeping) {
  Rng rng(60);
  PointNetConfig cfg;
  cfg.levels = {{16, 4, {8, 8}}, {4, 4, {16, 16}}};
  cfg.fp_widths = {8, 12};
  const PointNet3D<float> net(cfg, rng);
  ParameterList<float> params;
  net.collect_parameters(params, "pn");
  const auto find = [&](const std::string& name) {
    for (const auto& p : params)
      if (p.name == name) return p.tensor.shape();
    return Shape{};
  };
  // fp1 sees the coarsest features (16) plus the level-1 encoder features (8)
  EXPECT_EQ(find("pn.fp1.weight"), (Shape{16 + 8, 12}));
  // fp0 sees the decoded level-1 features (12) plus the RGB of the input points
  EXPECT_EQ(find("pn.fp0.weight"), (Shape{12 + 3, 8}));
}

TEST(PointNet, LevelSizesAndDecodedShapes) {
  Rng rng(61);
  PointNetConfig cfg;
  cfg.levels = {{16, 4, {8, 8}}, {4, 4, {16, 16}}};
  cfg.fp_widths = {8, 12};
  const PointNet3D<float> net(cfg, rng);
  PointCloud<float> cloud{test::random_tensor<float>(Shape{2, 32, 3}, rng),
                          test::random_tensor<float>(Shape{2, 32, 3}, rng), {32, 32}};
  const auto pyr = net.forward(cloud, 0);
  EXPECT_EQ(pyr.levels[1].size(), 16);
  EXPECT_EQ(pyr.levels[2].size(), 4);
  EXPECT_EQ(pyr.decoded[0].shape(), (Shape{2, 32, 8}));
  EXPECT_EQ(pyr.decoded[1].shape(), (Shape{2, 16, 12}));
  EXPECT_EQ(pyr.decoded[2].shape(), (Shape{2, 4, 16}));
}

TEST(PointNet, EncoderDecoderGradientCheck) {
  Rng rng(62);
  PointNetConfig cfg;
  cfg.levels = {{8, 4, {6, 6}}, {3, 3, {8}}};
  cfg.fp_widths = {5, 6};
  const PointNet3D<double> net(cfg, rng);
  ParameterList<double> params;
  net.collect_parameters(params, "pn");
  // zero biases would park dead units exactly on the ReLU kink
  for (auto& p : params)
    if (p.name.ends_with(".bias"))
      for (auto& b : p.tensor.mutable_data()) b = rng.normal(0, 0.1);
  // spread-out points keep the KNN and max selections stable under perturbation
  PointCloud<double> cloud{test::random_tensor<double>(Shape{1, 32, 3}, rng, 3.0),
                           test::random_tensor<double>(Shape{1, 32, 3}, rng), {32}};
  const auto r = test::random_tensor<double>(Shape{1, 32, 5}, rng);
  std::vector<Tensor64> inputs{cloud.feats};
  for (const auto& p : params) inputs.push_back(p.tensor);
  const auto res = check_gradients(
      "pointnet", [&] { return sum(mul(net.forward(cloud, 0).decoded[0], r)); }, inputs,
      GradcheckOptions{1e-5, 1e-4, 1e-3, 0});
  EXPECT_TRUE(res.passed) << res.max_rel_error;
}
