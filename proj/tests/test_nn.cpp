#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "isample/gradcheck.hpp"
#include "isample/layers.hpp"
#include "oracles.hpp"

using namespace isample;
using namespace isample::nn;

namespace {

Tensor<double> random_tensor(int n, int c, Extent3 sp, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(n, c, sp);
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  return std::inner_product(a.data.begin(), a.data.end(), b.data.begin(), 0.0);
}

/// Finite-difference check of loss = <layer(x), R> over the input and every trainable parameter.
GradCheckReport check_layer(Layer<double>& layer, Tensor<double> x, std::uint64_t seed) {
  Rng rng(seed);
  ParamList<double> params;
  layer.collect(params);
  const Tensor<double> probe = layer.forward(x, Mode::train);
  const Tensor<double> r = random_tensor(probe.n, probe.c, probe.sp, rng);
  for (auto* p : params) p->zero_grad();
  layer.forward(x, Mode::train);
  const Tensor<double> gx = layer.backward(r);
  std::vector<GradTarget> targets{{"x", x.data, gx.data}};
  for (auto* p : params)
    if (p->trainable) targets.push_back({p->name, p->value, p->grad});
  return check_gradients([&] { return dot(layer.forward(x, Mode::train), r); }, targets);
}

void randomize(Layer<double>& layer, Rng& rng, double lo, double hi) {
  ParamList<double> params;
  layer.collect(params);
  for (auto* p : params)
    if (p->trainable)
      for (auto& v : p->value) v = rng.uniform(lo, hi);
}

}  // namespace

TEST(Conv, HandExampleOneAxis) {
  Tensor<double> x(1, 1, {1, 1, 3});
  x.data = {1, 2, 3};
  std::vector<double> w{1, 0, -1};
  auto y = conv_forward<double>(x, w, {}, ConvShape{1, 1, {1, 1, 3}, 1});
  ASSERT_EQ(y.size(), 1u);
  EXPECT_EQ(y.data[0], -2.0);
}

TEST(Conv, ValidOutputLength) {
  EXPECT_EQ(ConvShape({1, 1, {1, 1, 3}, 1}).output_extent({1, 1, 8})[2], 6);
  EXPECT_EQ(ConvShape({1, 1, {1, 1, 3}, 2}).output_extent({1, 1, 8})[2], 3);
}

TEST(Conv, UndersizedInputNamesAxis) {
  try {
    ConvShape({1, 1, {1, 3, 3}, 1}).output_extent({1, 2, 8});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("axis 1"), std::string::npos);
  }
}

TEST(Conv, DeltaKernelIsCenterCrop) {
  Rng rng(3);
  auto x = random_tensor(2, 1, {1, 7, 6}, rng);
  std::vector<double> w(9, 0.0);
  w[4] = 1.0;
  auto y = conv_forward<double>(x, w, {}, ConvShape{1, 1, {1, 3, 3}, 1});
  auto c = crop(x, {0, 1, 1}, y.sp);
  EXPECT_EQ(y.data, c.data);
}

TEST(Conv, MatchesDirectOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const Extent3 k = trial % 2 ? Extent3{3, 3, 3} : Extent3{1, 3, 5};
    auto x = random_tensor(2, 3, {5, 6, 7}, rng);
    std::vector<double> w(4 * 3 * k[0] * k[1] * k[2]), b(4);
    for (auto& v : w) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    auto y = conv_forward<double>(x, w, b, ConvShape{3, 4, k, 1});
    auto ref = oracle::direct_conv(x, w, b, 4, k);
    ASSERT_TRUE(y.same_shape(ref));
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y.data[i], ref.data[i], 1e-12);
  }
}

TEST(Conv, ZeroUpstreamGivesZeroGradients) {
  Rng rng(5);
  auto x = random_tensor(1, 2, {1, 5, 5}, rng);
  std::vector<double> w(3 * 2 * 9);
  for (auto& v : w) v = rng.uniform(-1, 1);
  Tensor<double> g(1, 3, {1, 3, 3}, 0.0);
  auto grads = conv_backward<double>(g, x, w, ConvShape{2, 3, {1, 3, 3}, 1});
  for (double v : grads.x.data) EXPECT_EQ(v, 0.0);
  for (double v : grads.w) EXPECT_EQ(v, 0.0);
  for (double v : grads.b) EXPECT_EQ(v, 0.0);
}

TEST(Conv, SingleOutputWeightGradientIsInputWindow) {
  Rng rng(6);
  auto x = random_tensor(1, 1, {1, 3, 3}, rng);
  std::vector<double> w(9);
  for (auto& v : w) v = rng.uniform(-1, 1);
  Tensor<double> g(1, 1, {1, 1, 1}, 1.0);
  auto grads = conv_backward<double>(g, x, w, ConvShape{1, 1, {1, 3, 3}, 1});
  EXPECT_EQ(grads.w, x.data);
}

TEST(Conv, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    Conv<double> conv("c", ConvShape{2, 3, {1, 3, 3}, 1}, true, rng);
    randomize(conv, rng, -1, 1);
    auto report = check_layer(conv, random_tensor(2, 2, {1, 5, 5}, rng), seed);
    EXPECT_LE(report.max_relative_error, 1e-4) << "seed " << seed << " worst " << report.worst;
  }
}

TEST(Conv, Glorot) {
  EXPECT_NEAR(glorot_limit(100, 100), 0.17321, 1e-5);
  Rng a(9), b(9);
  EXPECT_EQ(glorot_init<float>(50, 10, 20, a), glorot_init<float>(50, 10, 20, b));
  Rng rng(1);
  auto v = glorot_init<double>(100000, 100, 100, rng);
  double mean = std::accumulate(v.begin(), v.end(), 0.0) / v.size(), var = 0.0;
  const double a_lim = glorot_limit(100, 100);
  for (double x : v) {
    EXPECT_LE(std::abs(x), a_lim);
    var += (x - mean) * (x - mean);
  }
  var /= v.size();
  EXPECT_NEAR(var, 2.0 / 200.0, 0.05 * 2.0 / 200.0);
}

TEST(Conv, BiasStartsAtZeroAndParamCount) {
  Rng rng(1);
  Conv<float> conv("c", ConvShape{1, 8, {3, 3, 3}, 1}, true, rng);
  for (float b : conv.bias().value) EXPECT_EQ(b, 0.0f);
  ParamList<float> params;
  conv.collect(params);
  EXPECT_EQ(param_count(params), 224u);
  EXPECT_EQ(param_count(ParamList<float>{}), 0u);
}

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  BatchNorm<double> bn("bn", 1);
  Tensor<double> x(3, 1, {1, 4, 4}, 2.5);
  for (double v : bn.forward(x, Mode::train).data) EXPECT_NEAR(v, 0.0, 1e-9);
}

TEST(BatchNorm, TrainingOutputIsStandardized) {
  Rng rng(4);
  BatchNorm<double> bn("bn", 3);
  auto x = random_tensor(4, 3, {1, 5, 5}, rng, -3, 7);
  auto y = bn.forward(x, Mode::train);
  for (int c = 0; c < 3; ++c) {
    double s = 0, ss = 0, n = 0;
    for (int b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < y.plane(); ++p) {
        s += y.channel(b, c)[p];
        n += 1;
      }
    const double m = s / n;
    for (int b = 0; b < 4; ++b)
      for (std::size_t p = 0; p < y.plane(); ++p) ss += (y.channel(b, c)[p] - m) * (y.channel(b, c)[p] - m);
    EXPECT_NEAR(m, 0.0, 1e-5);
    EXPECT_NEAR(ss / n, 1.0, 1e-5 + 1e-3);  // epsilon shrinks the variance slightly
  }
}

TEST(BatchNorm, FreshInferenceUsesInitialStatistics) {
  BatchNorm<double> bn("bn", 2);
  Tensor<double> x(1, 2, {1, 2, 2}, 0.5);
  auto y = bn.forward(x, Mode::infer);
  for (double v : y.data) EXPECT_NEAR(v, 0.5 / std::sqrt(1.0 + 1e-5), 1e-12);
}

TEST(BatchNorm, RunningStatisticsUseMomentum) {
  BatchNorm<double> bn("bn", 1);
  Tensor<double> x(1, 1, {1, 1, 2});
  x.data = {1.0, 3.0};
  bn.forward(x, Mode::train);
  EXPECT_NEAR(bn.running_mean().value[0], 0.9 * 0.0 + 0.1 * 2.0, 1e-12);
}

TEST(BatchNorm, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 100);
    BatchNorm<double> bn("bn", 2);
    randomize(bn, rng, 0.5, 1.5);
    auto report = check_layer(bn, random_tensor(3, 2, {1, 3, 4}, rng), seed);
    EXPECT_LE(report.max_relative_error, 1e-3) << "seed " << seed << " worst " << report.worst;
  }
}

TEST(SoftmaxCrossEntropy, UniformLogitsGiveLn2) {
  Tensor<double> logits(1, 2, {1, 2, 2}, 0.0);
  std::vector<std::uint16_t> t{0, 1, 1, 0};
  EXPECT_NEAR(softmax_cross_entropy<double>(logits, t, nullptr).loss, std::log(2.0), 1e-12);
}

TEST(SoftmaxCrossEntropy, LargeMarginGoesToZero) {
  Tensor<double> logits(1, 2, {1, 1, 1});
  logits.data = {1000.0, -1000.0};
  std::vector<std::uint16_t> t{0};
  EXPECT_NEAR(softmax_cross_entropy<double>(logits, t, nullptr).loss, 0.0, 1e-12);
}

TEST(SoftmaxCrossEntropy, RejectsOutOfRangeTarget) {
  Tensor<double> logits(1, 2, {1, 1, 1}, 0.0);
  std::vector<std::uint16_t> t{2};
  EXPECT_ANY_THROW(softmax_cross_entropy<double>(logits, t, nullptr));
}

TEST(SoftmaxCrossEntropy, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    auto logits = random_tensor(2, 3, {1, 3, 3}, rng, -3, 3);
    std::vector<std::uint16_t> t(2 * 9);
    for (auto& v : t) v = static_cast<std::uint16_t>(rng.index(3));
    Tensor<double> grad;
    softmax_cross_entropy<double>(logits, t, &grad);
    auto report = check_gradients([&] { return softmax_cross_entropy<double>(logits, t, nullptr).loss; },
                                  {{"logits", logits.data, grad.data}});
    EXPECT_LE(report.max_relative_error, 1e-5) << "seed " << seed;
  }
}

TEST(Softmax, ProbabilityVectors) {
  Rng rng(2);
  auto p = softmax(random_tensor(3, 4, {2, 3, 3}, rng, -20, 20));
  for (int b = 0; b < 3; ++b)
    for (std::size_t v = 0; v < p.plane(); ++v) {
      double s = 0;
      for (int k = 0; k < 4; ++k) {
        EXPECT_GE(p.channel(b, k)[v], 0.0);
        s += p.channel(b, k)[v];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Dropout, IdentityCases) {
  Rng rng(1);
  auto x = random_tensor(1, 2, {1, 4, 4}, rng);
  EXPECT_EQ(dropout(x, 0.0, Mode::train, rng).data, x.data);
  EXPECT_EQ(dropout(x, 0.7, Mode::infer, rng).data, x.data);
  EXPECT_THROW(dropout(x, 1.0, Mode::train, rng), std::invalid_argument);
}

TEST(Dropout, KeepsHalfAndPreservesMean) {
  Rng rng(7);
  Tensor<double> x(1, 1, {1, 1, 100000}, 1.0);
  auto y = dropout(x, 0.5, Mode::train, rng);
  double kept = 0, sum = 0;
  for (double v : y.data) {
    kept += v != 0.0;
    sum += v;
  }
  EXPECT_NEAR(kept / 1e5, 0.5, 0.01);
  EXPECT_NEAR(sum / 1e5, 1.0, 0.02);
}

TEST(ResBlock, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed + 7);
    const auto kind = seed % 2 ? ResidualKind::bottleneck : ResidualKind::standard;
    const int out = seed % 3 == 0 ? 2 : 4;
    ResBlock<double> block("rb", kind, 2, out, {1, 3, 3}, rng);
    randomize(block, rng, 0.3, 1.2);
    auto report = check_layer(block, random_tensor(3, 2, {1, 6, 6}, rng), seed);
    EXPECT_LE(report.max_relative_error, 1e-3) << "seed " << seed << " worst " << report.worst;
  }
}

TEST(ResBlock, ZeroBranchComputesShortcut) {
  for (auto kind : {ResidualKind::standard, ResidualKind::bottleneck}) {
    for (int out : {3, 5}) {
      Rng rng(3);
      ResBlock<double> block("rb", kind, 3, out, {1, 3, 3}, rng);
      auto x = random_tensor(2, 3, {1, 7, 7}, rng);
      auto y = block.forward(x, Mode::train);
      const int shrink = kind == ResidualKind::standard ? 2 : 1;
      auto sc = crop(x, {0, shrink, shrink}, y.sp);
      if (block.projection()) sc = block.projection()->forward(sc, Mode::infer);
      for (auto& v : sc.data) v = v > 0 ? v : 0;
      EXPECT_EQ(y.data, sc.data);
    }
  }
}

TEST(ReceptiveField, Recurrence) {
  const LayerSpec conv3{LayerKind::conv, {1, 3, 3}, 1, 1, 1, 0.0};
  EXPECT_EQ(receptive_field({conv3}, {1, 1, 1})[2], 3);
  EXPECT_EQ(receptive_field({conv3, conv3}, {1, 1, 1})[2], 5);
  EXPECT_EQ(receptive_field({conv3}, {1, 4, 4})[2], 9);
  EXPECT_EQ(receptive_field({conv3}, {1, 4, 4})[0], 1);
}

TEST(ReceptiveField, MatchesBruteForce) {
  Rng pick(2024);
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(trial);
    Sequential<double> net;
    int ch = 1;
    const int layers = 1 + int(pick.index(3));
    for (int l = 0; l < layers; ++l) {
      const int k = 1 + 2 * int(pick.index(3));
      const int out = 1 + int(pick.index(3));
      switch (pick.index(3)) {
        case 0: net.add(std::make_unique<Conv<double>>("c" + std::to_string(l), ConvShape{ch, out, {1, k, k}, 1}, true, rng)); break;
        case 1: net.add(std::make_unique<ResBlock<double>>("s" + std::to_string(l), ResidualKind::standard, ch, out, Extent3{1, k, k}, rng)); break;
        default: net.add(std::make_unique<ResBlock<double>>("b" + std::to_string(l), ResidualKind::bottleneck, ch, out * 4, Extent3{1, k, k}, rng)); break;
      }
      ch = net.output_channels(1);
    }
    std::vector<LayerSpec> chain;
    net.describe(chain);
    const int rf = receptive_field(chain, {1, 1, 1})[2];

    // Positive weights and inputs keep every ReLU active, so each input voxel
    // reaches its whole footprint.
    randomize(net, rng, 0.1, 1.0);
    ParamList<double> stats;
    net.collect(stats);
    for (auto* p : stats)
      if (!p->trainable) std::fill(p->value.begin(), p->value.end(), p->name.ends_with("running_mean") ? 0.0 : 1.0);
    const int side = 2 * rf + 3;
    Tensor<double> x(1, 1, {1, side, side});
    for (auto& v : x.data) v = rng.uniform(0.5, 1.0);
    auto base = net.forward(x, Mode::infer);
    Tensor<double> bumped = x;
    bumped.at(0, 0, 0, side / 2, side / 2) += 1.0;
    auto after = net.forward(bumped, Mode::infer);
    int ymin = 1 << 30, ymax = -1, xmin = 1 << 30, xmax = -1;
    for (int c = 0; c < base.c; ++c)
      for (int y = 0; y < base.sp[1]; ++y)
        for (int xx = 0; xx < base.sp[2]; ++xx)
          if (after.at(0, c, 0, y, xx) != base.at(0, c, 0, y, xx)) {
            ymin = std::min(ymin, y), ymax = std::max(ymax, y);
            xmin = std::min(xmin, xx), xmax = std::max(xmax, xx);
          }
    EXPECT_EQ(ymax - ymin + 1, rf) << "trial " << trial;
    EXPECT_EQ(xmax - xmin + 1, rf) << "trial " << trial;
  }
}

TEST(Determinism, ForwardBackwardBitIdentical) {
  auto run = [] {
    Rng rng(77);
    ResBlock<float> block("rb", ResidualKind::standard, 2, 4, {1, 3, 3}, rng);
    Tensor<float> x(2, 2, {1, 8, 8});
    for (auto& v : x.data) v = float(rng.uniform(-1, 1));
    auto y = block.forward(x, Mode::train);
    auto g = block.backward(y);
    ParamList<float> params;
    block.collect(params);
    std::vector<float> all = g.data;
    for (auto* p : params) all.insert(all.end(), p->grad.begin(), p->grad.end());
    return all;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    ASSERT_EQ(std::memcmp(&a[i], &b[i], sizeof(float)), 0) << "index " << i << ": " << a[i] << " vs " << b[i];
}
