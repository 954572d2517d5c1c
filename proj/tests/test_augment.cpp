#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "isample/augment.hpp"
#include "isample/synthetic.hpp"

using namespace isample;
using namespace isample::augment;

namespace {

Volume smooth_image(int rows, int cols) {
  std::vector<float> v(std::size_t(rows) * cols);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) v[std::size_t(y) * cols + x] = float(std::sin(0.03 * x) + std::cos(0.025 * y));
  return Volume({rows, cols}, {1.0f, 1.0f}, v);
}

LabelMap disc_labels(int rows, int cols, double cy, double cx, double r) {
  std::vector<std::uint16_t> l(std::size_t(rows) * cols, 0);
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x)
      if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) l[std::size_t(y) * cols + x] = 2;
  return LabelMap({rows, cols}, {1.0f, 1.0f}, l, 3);
}

AugmentConfig no_augment() {
  auto c = AugmentConfig::for_rank(2);
  c.jitter_enabled = false;
  c.rotation_enabled = false;
  return c;
}

}  // namespace

TEST(ResampleGrid, IdentityCase) {
  const Mat3 I{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  auto a = resample_grid({1, 1, 1}, {1, 1, 1}, I, {4, 7, 9}, {4, 7, 9});
  EXPECT_TRUE(a.identity());
  auto p = a({1, 2, 3});
  EXPECT_EQ(p, (Vec3{1, 2, 3}));
}

TEST(ResampleGrid, DoubleSpacingStridesTwo) {
  const Mat3 I{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  auto a = resample_grid({1, 1, 1}, {1, 2, 2}, I, {0, 10, 10}, {0, 0, 0});
  const auto p0 = a({0, 3, 3}), p1 = a({0, 4, 3}), p2 = a({0, 3, 4});
  EXPECT_DOUBLE_EQ(p1[1] - p0[1], 2.0);
  EXPECT_DOUBLE_EQ(p2[2] - p0[2], 2.0);
  EXPECT_DOUBLE_EQ(p1[2] - p0[2], 0.0);
}

TEST(ResampleGrid, QuarterTurnMapsToPerpendicularAxis) {
  auto a = resample_grid({1, 1, 1}, {1, 1, 1}, rotation_zyx(90, 0, 0), {0, 0, 0}, {0, 0, 0});
  const auto ey = a({0, 1, 0}), ex = a({0, 0, 1});
  EXPECT_NEAR(ey[1], 0.0, 1e-12);
  EXPECT_NEAR(std::abs(ey[2]), 1.0, 1e-12);
  EXPECT_NEAR(ex[2], 0.0, 1e-12);
  EXPECT_NEAR(std::abs(ex[1]), 1.0, 1e-12);
  EXPECT_NEAR(ey[0], 0.0, 1e-12);
}

TEST(ExtractPatchPair, IdentityIsDirectCrop) {
  const auto g = net::DualPathNet<float>(net::DualPathConfig::desk2d(), 1).geometry();
  auto image = smooth_image(100, 90);
  auto labels = disc_labels(100, 90, 40, 40, 9);
  Rng rng(1);
  for (Extent3 origin : {Extent3{0, 0, 0}, Extent3{0, 30, 41}, Extent3{0, 88, 78}}) {
    auto p = extract_patch_pair(image, labels, origin, g, no_augment(), rng, nn::Mode::train);
    auto q = extract_patch_pair(image, labels, origin, g, AugmentConfig::for_rank(2), rng, nn::Mode::infer);
    std::vector<float> hr(nn::Tensor<float>::plane_of(g.hr_input)), lr(nn::Tensor<float>::plane_of(g.lr_input));
    net::fill_inputs(image, g, origin, hr.data(), lr.data());
    EXPECT_EQ(p.hr, hr);
    EXPECT_EQ(p.lr, lr);
    EXPECT_EQ(q.hr, hr);
    EXPECT_EQ(q.lr, lr);
    for (int y = 0; y < g.output[1]; ++y)
      for (int x = 0; x < g.output[2]; ++x) {
        const auto want = labels.at_clamped(0, origin[1] + y, origin[2] + x);
        EXPECT_EQ(p.labels[std::size_t(y) * g.output[2] + x], want);
        EXPECT_EQ(q.labels[std::size_t(y) * g.output[2] + x], want);
      }
  }
}

TEST(ExtractPatchPair, LabelsComeFromSourceAndValuesAreFinite) {
  const auto g = net::DualPathNet<float>(net::DualPathConfig::desk2d(), 1).geometry();
  auto image = smooth_image(80, 80);
  auto labels = disc_labels(80, 80, 40, 40, 12);
  auto cfg = AugmentConfig::for_rank(2);
  cfg.rotation_deg = {45.0};
  cfg.spacing_jitter = 0.4;
  Rng rng(2);
  for (int t = 0; t < 200; ++t) {
    Extent3 origin{0, int(rng.index(80)), int(rng.index(80))};
    auto p = extract_patch_pair(image, labels, origin, g, cfg, rng, nn::Mode::train);
    for (auto l : p.labels) ASSERT_TRUE(l == 0 || l == 2);
    for (float v : p.hr) ASSERT_TRUE(std::isfinite(v));
    for (float v : p.lr) ASSERT_TRUE(std::isfinite(v));
  }
}

TEST(ExtractPatchPair, DeterministicPerRngState) {
  const auto g = net::DualPathNet<float>(net::DualPathConfig::desk2d(), 1).geometry();
  auto image = smooth_image(80, 80);
  auto labels = disc_labels(80, 80, 40, 40, 12);
  Rng a(3), b(3);
  auto p = extract_patch_pair(image, labels, {0, 20, 20}, g, AugmentConfig::for_rank(2), a, nn::Mode::train);
  auto q = extract_patch_pair(image, labels, {0, 20, 20}, g, AugmentConfig::for_rank(2), b, nn::Mode::train);
  EXPECT_EQ(p.hr, q.hr);
  EXPECT_EQ(p.lr, q.lr);
  EXPECT_EQ(p.labels, q.labels);
}

TEST(Rotation, ForwardThenBackReproducesCrop) {
  auto image = smooth_image(120, 120);
  const int N = 41;
  const Vec3 pivot{0, (N - 1) / 2.0, (N - 1) / 2.0};
  const Vec3 center{0, 60, 60};
  const Vec3 unit{1, 1, 1};
  for (double theta : {3.0, 10.0, -7.5}) {
    auto fwd = resample_grid(unit, unit, rotation_zyx(theta, 0, 0), center, pivot);
    std::vector<float> rotated(std::size_t(N) * N);
    for (int y = 0; y < N; ++y)
      for (int x = 0; x < N; ++x) rotated[std::size_t(y) * N + x] = sample_linear(image, fwd({0, double(y), double(x)}));
    Volume r({N, N}, {1, 1}, rotated);
    auto back = resample_grid(unit, unit, rotation_zyx(-theta, 0, 0), pivot, pivot);
    for (int y = 8; y < N - 8; ++y)
      for (int x = 8; x < N - 8; ++x) {
        const float twice = sample_linear(r, back({0, double(y), double(x)}));
        const float direct = image[std::size_t(60 - 20 + y) * 120 + (60 - 20 + x)];
        ASSERT_NEAR(twice, direct, 1e-3) << theta << " at " << y << "," << x;
      }
  }
}

TEST(ExtractPatchPair, CenterLabelUsuallyPreserved) {
  auto cfg = SyntheticConfig::preset_named("kidney2d");
  const auto g = net::DualPathNet<float>(net::DualPathConfig::desk2d(), 1).geometry();
  auto aug = AugmentConfig::for_rank(2);
  Rng rng(4);
  int same = 0, total = 0;
  for (int i = 0; i < 4; ++i) {
    auto c = generate_case(cfg, i);
    auto image = clamp_normalize(c.volume);
    const auto e = c.labels.extent();
    for (std::size_t v = 0; v < c.labels.size(); ++v) {
      if (c.labels[v] != 1) continue;
      const Extent3 center{0, int(v / e[2]), int(v % e[2])};
      Extent3 origin{0, center[1] - g.output[1] / 2, center[2] - g.output[2] / 2};
      for (int t = 0; t < 20; ++t) {
        auto p = extract_patch_pair(image, c.labels, origin, g, aug, rng, nn::Mode::train);
        const int by = center[1] - origin[1], bx = center[2] - origin[2];
        same += p.labels[std::size_t(by) * g.output[2] + bx] == 1;
        ++total;
      }
    }
  }
  ASSERT_GT(total, 1000);
  EXPECT_GE(double(same) / total, 0.99);
}

TEST(AugmentConfig, Validation) {
  auto c = AugmentConfig::for_rank(3);
  EXPECT_EQ(c.target_spacing, (std::vector<double>{1.5, 1.0, 1.0}));
  EXPECT_NO_THROW(c.validate(3));
  c.spacing_jitter = 1.0;
  EXPECT_ANY_THROW(c.validate(3));
  EXPECT_ANY_THROW(AugmentConfig::for_rank(2).validate(3));
}
