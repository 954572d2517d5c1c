#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "isample/dualpath.hpp"
#include "isample/gradcheck.hpp"
#include "fixtures.hpp"

using namespace isample;
using namespace isample::net;
namespace fs = std::filesystem;

using namespace fixture;

TEST(DualPath, DefaultBuilds) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 1);
  const auto& g = m.geometry();
  EXPECT_GE(g.output[1], 1);
  EXPECT_GE(g.output[2], 1);
  EXPECT_EQ(m.parameter_count(), 39234u);
}

TEST(DualPath, FusionMismatchIsAnError) {
  auto cfg = DualPathConfig::desk2d();
  cfg.hr_patch = {23, 23};
  EXPECT_THROW(DualPathNet<float>(cfg, 1), GeometryError);
  cfg = DualPathConfig::desk2d();
  cfg.hr_patch = {22, 23};
  EXPECT_THROW(DualPathNet<float>(cfg, 1), GeometryError);
}

TEST(DualPath, ShallowLowResPathRejected) {
  auto cfg = DualPathConfig::desk2d();
  cfg.lr_blocks.resize(1);
  EXPECT_ANY_THROW(cfg.validate());
}

TEST(DualPath, PaperScaleLowResFieldExceedsHighRes) {
  DualPathNet<float> m(DualPathConfig::paper3d(), 1);
  const auto h = m.hr_receptive_field(), l = m.lr_receptive_field();
  for (int a = 0; a < 3; ++a) EXPECT_GT(l[a], h[a]) << "axis " << a;
}

TEST(DualPath, ZeroClassifierGivesUniformOutput) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 2);
  auto spec = m.classifier_spec();
  ASSERT_EQ(spec.out, 2);
  for (auto* p : m.parameters())
    if (p->name.rfind("head.classifier", 0) == 0) std::fill(p->value.begin(), p->value.end(), 0.0f);
  Rng rng(1);
  Tensor<float> hr, lr;
  random_inputs(m.geometry(), 3, rng, hr, lr);
  auto p = m.forward(hr, lr, Mode::infer);
  for (float v : p.data) EXPECT_FLOAT_EQ(v, 0.5f);
}

TEST(DualPath, ConstantInputGivesConstantOutput) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 3);
  Rng rng(2);
  randomize_parameters(m, rng);
  Tensor<float> hr(1, 1, m.geometry().hr_input), lr(1, 1, m.geometry().lr_input);
  std::fill(hr.data.begin(), hr.data.end(), 0.7f);
  std::fill(lr.data.begin(), lr.data.end(), 0.7f);
  auto p = m.forward(hr, lr, Mode::infer);
  const std::size_t plane = p.plane();
  for (int k = 0; k < p.c; ++k)
    for (std::size_t v = 0; v < plane; ++v) EXPECT_EQ(p.data[k * plane + v], p.data[k * plane]);
}

TEST(DualPath, ProbabilitiesSumToOne) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 4);
  Rng rng(3);
  randomize_parameters(m, rng);
  Tensor<float> hr, lr;
  random_inputs(m.geometry(), 2, rng, hr, lr);
  auto p = m.forward(hr, lr, Mode::infer);
  const std::size_t plane = p.plane();
  for (int n = 0; n < p.n; ++n)
    for (std::size_t v = 0; v < plane; ++v) {
      double s = 0;
      for (int k = 0; k < p.c; ++k) {
        const float q = p.data[(std::size_t(n) * p.c + k) * plane + v];
        EXPECT_GE(q, 0.0f);
        s += q;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

class TinyGradient : public ::testing::TestWithParam<int> {};

TEST_P(TinyGradient, FullModelMatchesFiniteDifferences) {
  const int rank = GetParam();
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    DualPathNet<double> m(DualPathConfig::tiny(rank), seed);
    Rng rng(seed + 100);
    randomize_parameters(m, rng);
    Tensor<double> hr, lr;
    random_inputs(m.geometry(), 2, rng, hr, lr);
    std::vector<std::uint16_t> targets(2 * Tensor<double>::plane_of(m.geometry().output));
    for (auto& t : targets) t = std::uint16_t(rng.index(3));
    auto loss = [&] {
      m.dropout_rng() = Rng(seed);
      auto z = m.logits(hr, lr, Mode::train);
      return nn::softmax_cross_entropy<double>(z, targets, nullptr).loss;
    };
    m.zero_grad();
    m.dropout_rng() = Rng(seed);
    Tensor<double> g;
    nn::softmax_cross_entropy<double>(m.logits(hr, lr, Mode::train), targets, &g);
    m.backward(g);
    std::vector<nn::GradTarget> targets_fd;
    for (auto* p : m.parameters())
      if (p->trainable) targets_fd.push_back({p->name, p->value, p->grad});
    auto r = nn::check_gradients(loss, targets_fd);
    EXPECT_LE(r.max_relative_error, 1e-3) << "seed " << seed << " worst " << r.worst;
    EXPECT_GT(r.checked, 100u);
  }
}

INSTANTIATE_TEST_SUITE_P(Ranks, TinyGradient, ::testing::Values(2, 3));

TEST(Inference, TiledEqualsSingleWindow) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 5);
  Rng rng(4);
  perturb_parameters(m, rng);
  // One window: the image is exactly one tile of the smallest block that covers the context.
  const Extent3 context = m.geometry().lr_context();
  const int f = m.config().factor, B = m.geometry().output[1];
  const int side = B + f * ((context[1] - B + f - 1) / f);
  auto image = random_image({side, side}, rng);
  auto tiled = full_image_inference(m, image, side);
  auto direct = single_window(m, image, {1, side, side});
  ASSERT_EQ(tiled.probs.size(), direct.probs.size());
  for (std::size_t i = 0; i < tiled.probs.size(); ++i) ASSERT_NEAR(tiled.probs[i], direct.probs[i], 1e-5);
}

TEST(Inference, TilingsAgree) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 6);
  Rng rng(5);
  perturb_parameters(m, rng);
  auto image = random_image({91, 77}, rng);
  auto a = full_image_inference(m, image, m.geometry().output[1]);
  auto b = full_image_inference(m, image, 64);
  auto c = full_image_inference(m, image, 40);
  ASSERT_EQ(a.dims, image.dims());
  for (std::size_t i = 0; i < a.probs.size(); ++i) {
    ASSERT_NEAR(a.probs[i], b.probs[i], 1e-5);
    ASSERT_NEAR(a.probs[i], c.probs[i], 1e-5);
  }
  for (std::size_t v = 0; v < a.voxels(); ++v) ASSERT_NEAR(a.at(v, 0) + a.at(v, 1), 1.0, 1e-6);
}

TEST(Inference, Deterministic) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 7);
  Rng rng(6);
  auto image = random_image({80, 80}, rng);
  auto a = full_image_inference(m, image);
  auto b = full_image_inference(m, image);
  EXPECT_EQ(a.probs, b.probs);
}

TEST(Inference, ImageSmallerThanContextRejected) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 8);
  Rng rng(7);
  const int side = m.geometry().lr_context()[1] - 1;
  EXPECT_THROW(full_image_inference(m, random_image({side, 80}, rng)), nn::ShapeError);
}

TEST(DualPath, RandomAcceptedConfigsRunForward) {
  Rng rng(9);
  int accepted = 0;
  for (int t = 0; t < 300 && accepted < 15; ++t) {
    DualPathConfig cfg;
    cfg.rank = 2;
    cfg.factor = 1 + int(rng.index(4));
    cfg.hr_stem = 2 + int(rng.index(3));
    cfg.lr_stem = 2 + int(rng.index(3));
    const int nh = 1 + int(rng.index(2));
    const int nl = nh + int(rng.index(2));
    cfg.hr_blocks.clear();
    cfg.lr_blocks.clear();
    for (int i = 0; i < nh; ++i)
      cfg.hr_blocks.push_back({rng.index(2) ? nn::ResidualKind::standard : nn::ResidualKind::bottleneck,
                               4 + 4 * int(rng.index(2))});
    for (int i = 0; i < nl; ++i)
      cfg.lr_blocks.push_back({rng.index(2) ? nn::ResidualKind::standard : nn::ResidualKind::bottleneck,
                               4 + 4 * int(rng.index(2))});
    const int h = 8 + int(rng.index(20));
    const int l = 6 + int(rng.index(14));
    cfg.hr_patch = {h, h};
    cfg.lr_patch = {l, l};
    cfg.head_widths = {6};
    cfg.num_classes = 2 + int(rng.index(2));
    std::unique_ptr<DualPathNet<float>> m;
    try {
      m = std::make_unique<DualPathNet<float>>(cfg, t);
    } catch (const std::invalid_argument&) {
      continue;
    }
    ++accepted;
    Tensor<float> hr, lr;
    random_inputs(m->geometry(), 2, rng, hr, lr);
    auto p = m->forward(hr, lr, Mode::train);
    EXPECT_EQ(p.c, cfg.num_classes);
    EXPECT_EQ(p.sp, m->geometry().output);
  }
  EXPECT_GE(accepted, 5);
}

TEST(DualPath, ArgmaxInvariantToLogitShift) {
  DualPathNet<float> m(DualPathConfig::desk2d(), 10);
  Rng rng(11);
  randomize_parameters(m, rng);
  Tensor<float> hr, lr;
  random_inputs(m.geometry(), 1, rng, hr, lr);
  auto z = m.logits(hr, lr, Mode::infer);
  auto shifted = z;
  for (auto& v : shifted.data) v += 3.25f;
  auto a = nn::softmax(z), b = nn::softmax(shifted);
  const std::size_t plane = z.plane();
  for (std::size_t v = 0; v < plane; ++v) {
    const int ia = a.data[plane + v] > a.data[v], ib = b.data[plane + v] > b.data[v];
    EXPECT_EQ(ia, ib);
  }
}

TEST(Checkpoint, RoundTripAndMismatch) {
  auto dir = fs::temp_directory_path() / "isample_test_ckpt";
  fs::create_directories(dir);
  DualPathNet<float> a(DualPathConfig::desk2d(), 12), b(DualPathConfig::desk2d(), 13);
  Rng rng(1);
  randomize_parameters(a, rng);
  save_checkpoint(a, dir / "a.isck");
  load_checkpoint(b, dir / "a.isck");
  auto pa = a.parameters(), pb = b.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(pa[i]->value, pb[i]->value) << pa[i]->name;
  auto other = DualPathConfig::desk2d();
  other.head_widths = {32, 32};
  DualPathNet<float> c(other, 1);
  EXPECT_ANY_THROW(load_checkpoint(c, dir / "a.isck"));
  EXPECT_EQ(read_checkpoint_config(dir / "a.isck").to_keyvalues().entries(),
            DualPathConfig::desk2d().to_keyvalues().entries());
}
