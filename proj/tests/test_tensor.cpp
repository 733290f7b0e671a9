#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "ghostprobe/adam.hpp"
#include "ghostprobe/checkpoint.hpp"
#include "ghostprobe/gradcheck.hpp"
#include "ghostprobe/gradcheck_suite.hpp"
#include "ghostprobe/layers.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ghostprobe;
using namespace ghostprobe::test;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<float>(5)), DimensionError);
  const Tensor t(Shape{2, 3}, std::vector<float>(6, 1.0f), true);
  EXPECT_EQ(t.numel(), 6);
  EXPECT_EQ(t.grad().size(), 6u);
  EXPECT_EQ(t.dim(-1), 3);
}

TEST(Conv2d, ZeroInputZeroBiasGivesZero) {
  Rng rng(1);
  ConvLayer<float> layer{test::random_tensor<float>(Shape{1, 1, 3, 3}, rng),
                         Tensor::zeros(Shape{1}), 1, 1};
  const auto y = conv2d(Tensor::zeros(Shape{1, 1, 3, 3}), layer);
  for (const float v : y.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Conv2d, IdentityKernel) {
  Rng rng(2);
  const auto x = test::random_tensor<float>(Shape{2, 1, 5, 4}, rng);
  ConvLayer<float> layer{Tensor::full(Shape{1, 1, 1, 1}, 1.0f), Tensor::zeros(Shape{1}), 1, 0};
  const auto y = conv2d(x, layer);
  ASSERT_EQ(y.shape(), x.shape());
  for (std::size_t i = 0; i < x.data().size(); ++i) EXPECT_EQ(y.data()[i], x.data()[i]);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
  Rng rng(3);
  const auto x = test::random_tensor<double>(Shape{2, 3, 8, 8}, rng);
  const auto k = test::random_tensor<double>(Shape{4, 3, 3, 3}, rng);
  const auto b = test::random_tensor<double>(Shape{4}, rng);
  const auto y = conv2d(x, ConvLayer<double>{k, b, 1, 1});
  int oh = 0, ow = 0;
  const auto ref = conv_oracle(test::to_vec(x), 2, 3, 8, 8, test::to_vec(k), test::to_vec(b), 4, 3, 3, 1, 1, oh, ow);
  ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-5);
}

TEST(Conv2d, ChannelMismatchThrows) {
  Rng rng(4);
  ConvLayer<float> layer = make_conv<float>(3, 2, 3, rng);
  EXPECT_THROW(conv2d(Tensor::zeros(Shape{1, 2, 4, 4}), layer), DimensionError);
}

TEST(Conv2d, KernelSizeRestricted) {
  Rng rng(5);
  ConvLayer<float> layer{test::random_tensor<float>(Shape{1, 1, 5, 5}, rng), Tensor::zeros(Shape{1}), 1, 2};
  EXPECT_THROW(conv2d(Tensor::zeros(Shape{1, 1, 8, 8}), layer), DimensionError);
}

TEST(ShapeLaws, RandomConfigs) {
  Rng rng(6);
  for (int trial = 0; trial < 120; ++trial) {
    const int b = 1 + static_cast<int>(rng.below(2));
    const int c = 1 + static_cast<int>(rng.below(4));
    const int o = 1 + static_cast<int>(rng.below(4));
    const int h = 2 * (1 + static_cast<int>(rng.below(5)));
    const int w = 2 * (1 + static_cast<int>(rng.below(5)));
    const int k = 1 + static_cast<int>(rng.below(3));
    const int stride = 1 + static_cast<int>(rng.below(2));
    const int pad = static_cast<int>(rng.below(2));
    if (h + 2 * pad < k || w + 2 * pad < k) continue;
    const auto x = Tensor::zeros(Shape{b, c, h, w});
    ConvLayer<float> conv{Tensor::zeros(Shape{o, c, k, k}), Tensor::zeros(Shape{o}), stride, pad};
    const auto y = conv2d(x, conv);
    EXPECT_EQ(y.shape(), (Shape{b, o, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1}));
    const auto p = maxpool2x2(x);
    EXPECT_EQ(p.shape(), (Shape{b, c, h / 2, w / 2}));
    ConvLayer<float> up{Tensor::zeros(Shape{c, o, 2, 2}), Tensor::zeros(Shape{o}), 2, 0};
    EXPECT_EQ(transpose_conv2x2(x, up).shape(), (Shape{b, o, 2 * h, 2 * w}));
  }
}

TEST(MaxPool, PaperShape) {
  EXPECT_EQ(maxpool2x2(Tensor::zeros(Shape{1, 16, 64, 64})).shape(), (Shape{1, 16, 32, 32}));
}

TEST(MaxPool, OddExtentThrows) {
  EXPECT_THROW(maxpool2x2(Tensor::zeros(Shape{1, 1, 5, 4})), DimensionError);
}

TEST(MaxPool, PicksWindowMaximum) {
  const Tensor x(Shape{1, 1, 2, 4}, {1, 5, -1, 0, 3, 2, -2, -3});
  const auto y = maxpool2x2(x);
  EXPECT_EQ(test::to_vec(y), (std::vector<double>{5, 0}));
}

TEST(TransposeConv, PaperShape) {
  Rng rng(7);
  const auto layer = make_transpose_conv<float>(8, 4, rng);
  EXPECT_EQ(transpose_conv2x2(Tensor::zeros(Shape{1, 8, 4, 4}), layer).shape(), (Shape{1, 4, 8, 8}));
}

TEST(TransposeConv, MatchesScatterOracle) {
  Rng rng(8);
  const auto x = test::random_tensor<double>(Shape{1, 2, 3, 2}, rng);
  const auto w = test::random_tensor<double>(Shape{2, 3, 2, 2}, rng);
  const auto b = test::random_tensor<double>(Shape{3}, rng);
  const auto y = transpose_conv2x2(x, ConvLayer<double>{w, b, 2, 0});
  for (int o = 0; o < 3; ++o)
    for (int oy = 0; oy < 6; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double ref = b.at({o});
        for (int c = 0; c < 2; ++c) ref += x.at({0, c, oy / 2, ox / 2}) * w.at({c, o, oy % 2, ox % 2});
        EXPECT_NEAR(y.at({0, o, oy, ox}), ref, 1e-12);
      }
}

TEST(Softmax, EqualRowIsUniform) {
  const auto y = softmax_rows(Tensor::full(Shape{1, 5}, 3.0f));
  for (const float v : y.data()) EXPECT_NEAR(v, 0.2f, 1e-7);
}

TEST(Softmax, RowsAreStochastic) {
  Rng rng(9);
  const auto y = softmax_rows(test::random_tensor<double>(Shape{4, 7}, rng, 5.0));
  for (int r = 0; r < 4; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GE(y.at({r, c}), 0.0);
      s += y.at({r, c});
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Concat, SliceRecoversParts) {
  Rng rng(10);
  const auto a = test::random_tensor<float>(Shape{2, 3, 2, 2}, rng);
  const auto b = test::random_tensor<float>(Shape{2, 5, 2, 2}, rng);
  const auto ab = concat_channels(a, b);
  EXPECT_EQ(ab.shape(), (Shape{2, 8, 2, 2}));
  EXPECT_EQ(test::to_vec(slice(ab, 1, 0, 3)), test::to_vec(a));
  EXPECT_EQ(test::to_vec(slice(ab, 1, 3, 8)), test::to_vec(b));
}

TEST(FlattenSpatial, Layout) {
  const Tensor x(Shape{1, 2, 1, 3}, {1, 2, 3, 4, 5, 6});
  const auto f = flatten_spatial(x);
  EXPECT_EQ(f.shape(), (Shape{1, 3, 2}));
  EXPECT_EQ(test::to_vec(f), (std::vector<double>{1, 4, 2, 5, 3, 6}));
  EXPECT_EQ(test::to_vec(unflatten_spatial(f, 1, 3)), test::to_vec(x));
}

TEST(Matmul, SmallProduct) {
  const Tensor a(Shape{2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b(Shape{3, 2}, {7, 8, 9, 10, 11, 12});
  EXPECT_EQ(test::to_vec(matmul(a, b)), (std::vector<double>{58, 64, 139, 154}));
}

TEST(Bce, OutOfRangeIsDomainError) {
  EXPECT_THROW(bce_loss(Tensor::full(Shape{2}, 1.5f), Tensor::zeros(Shape{2})), DomainError);
  EXPECT_THROW(bce_loss(Tensor::full(Shape{2}, 0.5f), Tensor::full(Shape{2}, -0.1f)), DomainError);
}

TEST(Bce, ClampKeepsLossFinite) {
  const auto loss = bce_loss(Tensor::full(Shape{3}, 0.0f), Tensor::full(Shape{3}, 1.0f));
  EXPECT_TRUE(std::isfinite(loss.item()));
  EXPECT_NEAR(loss.item(), -std::log(kBceEpsilon), 1e-3);
}

TEST(Backward, SumGivesOnes) {
  auto x = Tensor::full(Shape{2, 3, 4}, 0.3f, true);
  backward(sum(x));
  for (const float g : x.grad()) EXPECT_EQ(g, 1.0f);
}

TEST(Backward, NonScalarIsUsageError) {
  auto x = Tensor::full(Shape{3}, 1.0f, true);
  EXPECT_THROW(backward(relu(x)), UsageError);
}

TEST(Backward, UnreachedParameterGetsZero) {
  auto used = Tensor::full(Shape{2}, 1.0f, true);
  auto unused = Tensor::full(Shape{2}, 1.0f, true);
  unused.mutable_grad()[0] = 7.0f;
  unused.zero_grad();
  backward(sum(scale(used, 2.0f)));
  for (const float g : unused.grad()) EXPECT_EQ(g, 0.0f);
  for (const float g : used.grad()) EXPECT_EQ(g, 2.0f);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  auto x = Tensor::full(Shape{2}, 1.0f, true);
  NoGradGuard guard;
  const auto y = sum(x);
  EXPECT_FALSE(y.requires_grad());
  EXPECT_FALSE(static_cast<bool>(y.node()->backward_fn));
}

TEST(Gradcheck, ScalarLogisticBce) {
  auto w = Tensor64::scalar(0.7, true);
  const Tensor64 x(Shape{1}, {1.3});
  const Tensor64 t(Shape{1}, {1.0});
  const auto r = check_gradients(
      "bce_sigmoid", [&] { return bce_loss(sigmoid(mul(reshape(w, Shape{1}), x)), t); }, {w},
      GradcheckOptions{1e-5, 1e-6, 1e-3, 0});
  EXPECT_TRUE(r.passed) << r.max_rel_error;
  // closed form: d/dw = (sigmoid(w x) - t) * x
  const double s = 1.0 / (1.0 + std::exp(-0.7 * 1.3));
  EXPECT_NEAR(w.grad()[0], (s - 1.0) * 1.3, 1e-12);
}

TEST(Adam, ZeroGradientFromFreshStateLeavesParameters) {
  ParameterList<double> params{{"p", Tensor64(Shape{2}, {1.0, -2.0}, true)}};
  AdamState<double> st(params, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  zero_grad(params);
  adam_step(params, st);
  EXPECT_EQ(test::to_vec(params[0].tensor), (std::vector<double>{1.0, -2.0}));
  EXPECT_EQ(st.step, 1);
}

TEST(Adam, MomentsDecayUnderZeroGradient) {
  ParameterList<double> params{{"p", Tensor64(Shape{1}, {1.0}, true)}};
  AdamState<double> st(params, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  st.first_moment[0] = {0.5};
  st.second_moment[0] = {0.25};
  zero_grad(params);
  adam_step(params, st);
  EXPECT_NEAR(st.first_moment[0][0], 0.45, 1e-15);
  EXPECT_NEAR(st.second_moment[0][0], 0.24975, 1e-15);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParameterList<double> params{{"p", Tensor64::scalar(0.0, true)}};
  AdamState<double> st(params, AdamOptions{0.1, 0.9, 0.999, 1e-8});
  params[0].tensor.mutable_grad()[0] = 1.0;
  adam_step(params, st);
  // m_hat = 1, v_hat = 1, update = lr / (1 + eps)
  EXPECT_NEAR(params[0].tensor.item(), -0.1 / (1.0 + 1e-8), 1e-15);
}

TEST(Adam, QuadraticBowlDecreasesMonotonically) {
  auto w = Tensor64::scalar(0.0, true);
  ParameterList<double> params{{"w", w}};
  AdamState<double> st(params, AdamOptions{1e-4, 0.9, 0.999, 1e-8});
  double prev = 9.0;
  for (int i = 0; i < 100; ++i) {
    zero_grad(params);
    const auto d = add(reshape(w, Shape{1}), Tensor64(Shape{1}, {-3.0}));
    const auto f = sum(mul(d, d));
    if (i > 0) EXPECT_LT(f.item(), prev);
    prev = f.item();
    backward(f);
    adam_step(params, st);
  }
}

TEST(Adam, ZeroLearningRateIsBitIdentical) {
  Rng rng(11);
  ParameterList<float> params{{"a", test::random_tensor<float>(Shape{3, 3}, rng, 1.0, true)}};
  AdamState<float> st(params, AdamOptions{0.0, 0.9, 0.999, 1e-8});
  const auto before = test::to_vec(params[0].tensor);
  for (auto& g : params[0].tensor.mutable_grad()) g = 0.37f;
  adam_step(params, st);
  EXPECT_EQ(test::to_vec(params[0].tensor), before);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  Rng rng(12);
  ParameterList<float> params{{"layer.weight", test::random_tensor<float>(Shape{2, 3, 3, 3}, rng, 1.0, true)},
                              {"layer.bias", test::random_tensor<float>(Shape{2}, rng, 1.0, true)}};
  params[0].tensor.mutable_data()[0] = -0.0f;
  params[0].tensor.mutable_data()[1] = 1e-40f;  // subnormal
  const auto path = test::temp_dir("ckpt") / "a.dpgp";
  save_parameters(path, params);
  const auto records = read_checkpoint(path);
  ASSERT_EQ(records.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(records[i].name, params[i].name);
    EXPECT_EQ(records[i].shape, params[i].tensor.shape());
    const auto d = params[i].tensor.data();
    EXPECT_EQ(0, std::memcmp(records[i].values.data(), d.data(), d.size() * sizeof(float)));
  }
  ParameterList<float> other{{"layer.weight", Tensor::zeros(Shape{2, 3, 3, 3}, true)},
                             {"layer.bias", Tensor::zeros(Shape{2}, true)}};
  load_parameters(path, other);
  EXPECT_EQ(0, std::memcmp(other[0].tensor.data().data(), params[0].tensor.data().data(), 54 * sizeof(float)));
  write_checkpoint(path.parent_path() / "b.dpgp", records);
  EXPECT_EQ(test::read_bytes(path), test::read_bytes(path.parent_path() / "b.dpgp"));
}

TEST(Checkpoint, ByteLayout) {
  const std::vector<CheckpointRecord> recs{{"w", Shape{2}, {1.0f, -2.0f}}};
  const auto path = test::temp_dir("ckpt_layout") / "c.dpgp";
  write_checkpoint(path, recs);
  const auto bytes = test::read_bytes(path);
  // magic, u32 name length, name, u32 rank, u64 extent, two f32
  const std::vector<unsigned char> expected{'D', 'P', 'G', 'P', '1', 1, 0, 0, 0, 'w', 1, 0, 0, 0,
                                            2, 0, 0, 0, 0, 0, 0, 0, 0x00, 0x00, 0x80, 0x3F,
                                            0x00, 0x00, 0x00, 0xC0};
  EXPECT_EQ(bytes, expected);
}

TEST(Checkpoint, BadMagicAndShapeMismatch) {
  const auto dir = test::temp_dir("ckpt_bad");
  std::ofstream(dir / "x.dpgp", std::ios::binary) << "NOPE1";
  EXPECT_THROW(read_checkpoint(dir / "x.dpgp"), FormatError);
  write_checkpoint(dir / "y.dpgp", {{"w", Shape{3}, {1, 2, 3}}});
  ParameterList<float> p{{"w", Tensor::zeros(Shape{2}, true)}};
  EXPECT_THROW(load_parameters(dir / "y.dpgp", p), std::exception);
}

TEST(Determinism, SameSeedSameOutput) {
  auto run = [] {
    Rng rng(13);
    const auto layer = make_conv<float>(3, 4, 3, rng);
    const auto x = test::random_tensor<float>(Shape{1, 3, 6, 6}, rng);
    return test::to_vec(relu(conv2d(x, layer)));
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradcheck, EveryOpWithinTolerance) {
  const auto rows = check_all_ops(7, 1e-6);
  EXPECT_GE(rows.size(), 25u);
  for (const auto& r : rows) EXPECT_TRUE(r.passed) << r.name << " " << r.max_rel_error;
}
