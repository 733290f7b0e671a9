#include "ghostprobe/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ghostprobe {

namespace {

Tensor64 random_tensor(Shape shape, Rng& rng, double stddev = 1.0) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.normal(0.0, stddev);
  return Tensor64(std::move(shape), std::move(v), true);
}

// Entries spaced at least 0.05 apart in random order, so max-type ops have
// no near-ties within the finite-difference step.
Tensor64 separated_tensor(Shape shape, Rng& rng) {
  const auto n = static_cast<std::size_t>(shape_numel(shape));
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 0.05 * (static_cast<double>(i) - n / 2.0) + 0.01;
  for (std::size_t i = n; i > 1; --i) std::swap(v[i - 1], v[rng.below(i)]);
  return Tensor64(std::move(shape), std::move(v), true);
}

// Values bounded away from zero by 0.05 for the ReLU check.
Tensor64 off_kink_tensor(Shape shape, Rng& rng) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    const double m = rng.uniform(0.05, 1.5);
    x = rng.uniform() < 0.5 ? -m : m;
  }
  return Tensor64(std::move(shape), std::move(v), true);
}

// Scalar probe: sum(out * R) with a fixed random R of unit total scale.
Tensor64 probe(const Tensor64& out, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> r(static_cast<std::size_t>(out.numel()));
  const double s = 1.0 / std::sqrt(static_cast<double>(r.size()));
  for (auto& x : r) x = rng.normal(0.0, s);
  return sum(mul(out, Tensor64(out.shape(), std::move(r))));
}

ConvLayer<double> random_conv(std::int64_t in, std::int64_t out, std::int64_t k, int stride,
                              int padding, Rng& rng) {
  return ConvLayer<double>{random_tensor(Shape{out, in, k, k}, rng, 0.5),
                           random_tensor(Shape{out}, rng, 0.5), stride, padding};
}

PointCloud<double> random_cloud(std::int64_t b, std::int64_t n, std::int64_t d, Rng& rng) {
  std::vector<double> xyz(static_cast<std::size_t>(b * n * 3));
  for (auto& x : xyz) x = rng.uniform(-2.0, 2.0);
  return PointCloud<double>{Tensor64(Shape{b, n, 3}, std::move(xyz)),
                            random_tensor(Shape{b, n, d}, rng), std::vector<std::int64_t>(static_cast<std::size_t>(b), n)};
}

}  // namespace

ModelConfig composed_check_config() {
  ModelConfig cfg;
  cfg.flags = AblationFlags{true, true, true};
  cfg.unet = UNetConfig{4, 2, 2};
  cfg.pointnet.in_features = 3;
  cfg.pointnet.levels = {SALevelConfig{16, 4, {8, 8}}, SALevelConfig{4, 4, {16, 16}}};
  cfg.pointnet.fp_widths = {8, 16};
  cfg.fusion = FusionConfig{16, 0, -1};
  cfg.input_size = 32;
  cfg.max_points = 64;
  return cfg;
}

std::vector<GradcheckResult> check_all_ops(std::uint64_t seed, double op_tolerance) {
  GradcheckOptions opt;
  opt.tolerance = op_tolerance;
  Rng rng(seed);
  std::vector<GradcheckResult> rows;
  auto run = [&](const std::string& name, const std::function<Tensor64()>& f,
                 std::vector<Tensor64> inputs) {
    rows.push_back(check_gradients(name, f, std::move(inputs), opt));
  };

  {
    auto x = random_tensor(Shape{2, 3, 5, 6}, rng);
    auto c = random_conv(3, 4, 3, 1, 1, rng);
    run("conv2d_3x3", [=] { return probe(conv2d(x, c), 11); }, {x, c.weight, c.bias});
  }
  {
    auto x = random_tensor(Shape{1, 2, 7, 6}, rng);
    auto c = random_conv(2, 3, 3, 2, 1, rng);
    run("conv2d_3x3_stride2", [=] { return probe(conv2d(x, c), 12); }, {x, c.weight, c.bias});
  }
  {
    auto x = random_tensor(Shape{2, 5, 4, 3}, rng);
    auto c = random_conv(5, 2, 1, 1, 0, rng);
    run("conv2d_1x1", [=] { return probe(conv2d(x, c), 13); }, {x, c.weight, c.bias});
  }
  {
    auto x = random_tensor(Shape{2, 3, 3, 4}, rng);
    ConvLayer<double> c{random_tensor(Shape{3, 2, 2, 2}, rng, 0.5), random_tensor(Shape{2}, rng), 2, 0};
    run("transpose_conv2x2", [=] { return probe(transpose_conv2x2(x, c), 14); },
        {x, c.weight, c.bias});
  }
  {
    auto x = separated_tensor(Shape{2, 2, 4, 6}, rng);
    run("maxpool2x2", [=] { return probe(maxpool2x2(x), 15); }, {x});
  }
  {
    auto x = off_kink_tensor(Shape{3, 7}, rng);
    run("relu", [=] { return probe(relu(x), 16); }, {x});
  }
  {
    auto x = random_tensor(Shape{4, 5}, rng, 2.0);
    run("sigmoid", [=] { return probe(sigmoid(x), 17); }, {x});
  }
  {
    auto a = random_tensor(Shape{2, 3, 4}, rng);
    auto b = random_tensor(Shape{2, 2, 4}, rng);
    run("concat", [=] { return probe(concat(a, b, 1), 18); }, {a, b});
  }
  {
    auto x = random_tensor(Shape{3, 6, 2}, rng);
    run("slice", [=] { return probe(slice(x, 1, 1, 4), 19); }, {x});
  }
  {
    auto x = random_tensor(Shape{2, 3, 4}, rng);
    run("reshape", [=] { return probe(reshape(x, Shape{6, 4}), 20); }, {x});
  }
  {
    auto a = random_tensor(Shape{3, 4}, rng);
    auto b = random_tensor(Shape{4, 5}, rng);
    run("matmul_2d", [=] { return probe(matmul(a, b), 21); }, {a, b});
  }
  {
    auto a = random_tensor(Shape{2, 3, 4}, rng);
    auto b = random_tensor(Shape{4, 2}, rng);
    run("matmul_shared_rhs", [=] { return probe(matmul(a, b), 22); }, {a, b});
  }
  {
    auto a = random_tensor(Shape{2, 3, 4}, rng);
    auto b = random_tensor(Shape{2, 4, 5}, rng);
    run("matmul_batched", [=] { return probe(matmul(a, b), 23); }, {a, b});
  }
  {
    auto x = random_tensor(Shape{2, 3, 4}, rng);
    run("transpose_last2", [=] { return probe(transpose_last2(x), 24); }, {x});
  }
  {
    auto x = random_tensor(Shape{2, 3, 5}, rng);
    run("softmax_rows", [=] { return probe(softmax_rows(x), 25); }, {x});
  }
  {
    auto x = random_tensor(Shape{2, 3, 2, 4}, rng);
    run("flatten_spatial", [=] { return probe(flatten_spatial(x), 26); }, {x});
    auto y = random_tensor(Shape{2, 8, 3}, rng);
    run("unflatten_spatial", [=] { return probe(unflatten_spatial(y, 2, 4), 27); }, {y});
  }
  {
    auto x = random_tensor(Shape{2, 3, 4}, rng);
    LinearLayer<double> l{random_tensor(Shape{4, 5}, rng), random_tensor(Shape{5}, rng)};
    run("linear", [=] { return probe(linear(x, l), 28); }, {x, l.weight, l.bias});
  }
  {
    auto a = random_tensor(Shape{3, 4}, rng);
    auto b = random_tensor(Shape{3, 4}, rng);
    run("add", [=] { return probe(add(a, b), 29); }, {a, b});
    run("mul", [=] { return probe(mul(a, b), 30); }, {a, b});
    run("scale", [=] { return probe(scale(a, 0.7), 31); }, {a});
    run("sum", [=] { return sum(a); }, {a});
    run("mean", [=] { return mean(a); }, {a});
  }
  {
    auto x = separated_tensor(Shape{2, 3, 4, 5}, rng);
    run("max_reduce", [=] { return probe(max_reduce(x, 2), 32); }, {x});
  }
  {
    auto x = random_tensor(Shape{2, 5, 3}, rng);
    const std::vector<std::int64_t> idx{0, 4, 4, 1, 2, 3, 3, 0, 1, 1, 2, 4};
    run("gather", [=] { return probe(gather<double>(x, idx, Shape{2, 3, 2}), 33); }, {x});
    const std::vector<double> w{0.5, 0.3, 0.2, 0.1, 0.1, 0.8, 0.6, 0.2, 0.2, 0.3, 0.3, 0.4};
    run("weighted_gather", [=] { return probe(weighted_gather<double>(x, idx, w, 2, 3), 34); }, {x});
  }
  {
    auto logits = random_tensor(Shape{2, 1, 3, 3}, rng);
    std::vector<double> t(18);
    for (auto& v : t) v = rng.uniform() < 0.5 ? 0.0 : 1.0;
    const Tensor64 target(Shape{2, 1, 3, 3}, t);
    run("bce_loss", [=] { return bce_loss(sigmoid(logits), target); }, {logits});
  }
  {
    auto x = random_tensor(Shape{2, 3, 4, 4}, rng);
    auto c = random_conv(3, 1, 1, 1, 0, rng);
    run("head_forward", [=] { return probe(head_forward(x, c), 35); }, {x, c.weight, c.bias});
  }
  {
    auto f2d = random_tensor(Shape{1, 3, 2, 2}, rng);
    auto f3d = random_tensor(Shape{1, 5, 4}, rng);
    ProjectionWeights<double> w{random_tensor(Shape{3, 3}, rng, 0.5), random_tensor(Shape{4, 3}, rng, 0.5),
                                random_tensor(Shape{4, 3}, rng, 0.5)};
    run("cross_attention", [=] { return probe(cross_attention(f2d, f3d, w), 36); },
        {f2d, f3d, w.w_q, w.w_k, w.w_v});
  }
  {
    auto cloud = random_cloud(2, 12, 3, rng);
    auto feats = cloud.feats;
    feats.set_requires_grad(true);
    cloud.feats = feats;
    std::vector<LinearLayer<double>> mlp{
        LinearLayer<double>{random_tensor(Shape{6, 5}, rng, 0.5), random_tensor(Shape{5}, rng, 0.5)},
        LinearLayer<double>{random_tensor(Shape{5, 4}, rng, 0.5), random_tensor(Shape{4}, rng, 0.5)}};
    const SALevelConfig level{4, 3, {5, 4}};
    run("set_abstraction",
        [=] { return probe(set_abstraction(cloud, level, mlp).feats, 37); },
        {feats, mlp[0].weight, mlp[0].bias, mlp[1].weight, mlp[1].bias});
  }
  {
    auto cloud = random_cloud(1, 10, 3, rng);
    auto coarse = random_cloud(1, 4, 5, rng);
    auto fine_feats = cloud.feats;
    auto coarse_feats = coarse.feats;
    fine_feats.set_requires_grad(true);
    coarse_feats.set_requires_grad(true);
    cloud.feats = fine_feats;
    LinearLayer<double> layer{random_tensor(Shape{8, 6}, rng, 0.5), random_tensor(Shape{6}, rng, 0.5)};
    run("feature_propagation",
        [=] { return probe(propagate_level(cloud, coarse.coords, coarse_feats, layer, 3), 38); },
        {fine_feats, coarse_feats, layer.weight, layer.bias});
  }
  return rows;
}

GradcheckResult check_composed_model(const ModelConfig& cfg, std::uint64_t seed, double tolerance,
                                     std::size_t max_elements_per_tensor) {
  Rng rng(seed);
  DPGPModel<double> model(cfg, rng);
  const auto s = cfg.input_size;
  const auto c = cfg.unet.in_channels;
  std::vector<double> img(static_cast<std::size_t>(c * s * s));
  for (auto& v : img) v = rng.uniform();
  const Tensor64 image(Shape{1, c, s, s}, img);
  auto cloud = random_cloud(1, cfg.max_points, cfg.pointnet.in_features, rng);
  std::vector<Tensor64> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  opt.max_elements_per_input = max_elements_per_tensor;
  // Linear probe of the probability map rather than BCE: with saturated
  // sigmoids, log(1 - p) is only accurate to ~1e-10 relative and the
  // finite differences would measure that noise instead of the gradient.
  return check_gradients(
      "composed_model", [&] { return probe(model.forward(image, cloud), seed + 1); }, params, opt);
}

}  // namespace ghostprobe
