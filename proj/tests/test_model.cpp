#include <gtest/gtest.h>

#include <cmath>

#include "msloc/model.hpp"
#include "support/fd.hpp"

using namespace msloc;
using msloc::testing::check_gradients;
using msloc::testing::random_tensor;

namespace {

ModelConfig tiny(std::size_t blocks = 2, std::size_t classes = 2) {
  ModelConfig c;
  c.num_blocks = blocks;
  c.layers_per_block = 2;
  c.growth_rate = 3;
  c.stem_channels = 4;
  c.input_height = 16;
  c.input_width = 16;
  c.num_classes = classes;
  return c;
}

Tensor random_images(std::size_t n, const ModelConfig& c, Rng& rng) {
  return random_tensor({n, 1, c.input_height, c.input_width}, rng, 0.0, 1.0);
}

/// Random relevance logits and head biases so that no weight is trivially 1/B.
void perturb(Model& m, Rng& rng) {
  for (double& v : m.relevance_logits.mutable_data()) v = rng.uniform(-1.0, 1.0);
  for (auto& h : m.heads)
    for (double& v : h.bias.mutable_data()) v = rng.uniform(-0.5, 0.5);
}

}  // namespace

TEST(InitModel, RelevanceStartsAtOneOverB) {
  for (std::size_t B : {1, 2, 3}) {
    ModelConfig c = tiny(B);
    c.input_height = c.input_width = 32;
    const auto w = relevance_weights(init_model(c, 4));
    for (const auto& row : w)
      for (double v : row) EXPECT_EQ(v, 1.0 / static_cast<double>(B));
  }
}

TEST(InitModel, DeterministicPerSeed) {
  const Model a = init_model(ModelConfig{}, 9), b = init_model(ModelConfig{}, 9), c = init_model(ModelConfig{}, 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    EXPECT_TRUE(std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pb[i].tensor.data().begin()));
    any_diff = any_diff || !std::equal(pa[i].tensor.data().begin(), pa[i].tensor.data().end(), pc[i].tensor.data().begin());
  }
  EXPECT_TRUE(any_diff);
}

TEST(InitModel, XavierBoundsAndZeroBiases) {
  const ModelConfig c;
  const Model m = init_model(c, 1);
  for (const auto& p : m.parameters()) {
    const auto& s = p.tensor.shape();
    if (p.name.ends_with(".bias") || p.name == "relevance_logits") {
      for (double v : p.tensor.data()) EXPECT_EQ(v, 0.0) << p.name;
      continue;
    }
    std::size_t fan_in = s[1], fan_out = s[0];
    if (s.size() == 4) {
      fan_in *= s[2] * s[3];
      fan_out *= s[2] * s[3];
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double v : p.tensor.data()) EXPECT_LE(std::abs(v), bound) << p.name;
  }
}

TEST(InitModel, RejectsIndivisibleInput) {
  ModelConfig c;
  c.input_height = 60;
  EXPECT_THROW(init_model(c, 0), std::invalid_argument);
  c = ModelConfig{};
  c.kernel_size = 2;
  EXPECT_THROW(init_model(c, 0), std::invalid_argument);
}

TEST(Forward, BlockExtentsForDefaultConfig) {
  const ModelConfig c;
  const Model m = init_model(c, 0);
  Rng rng(1);
  const ForwardOutput out = forward(m, random_images(2, c, rng));
  ASSERT_EQ(out.block_features.size(), 3u);
  const std::size_t extents[] = {16, 8, 4};
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_EQ(out.block_features[b].shape(), (Shape{2, c.block_feature_channels(b), extents[b], extents[b]}));
    EXPECT_EQ(out.block_logits[b].shape(), (Shape{2, 2}));
  }
  EXPECT_EQ(c.block_feature_channels(0), 16u + 4 * 12);
  EXPECT_EQ(c.block_feature_channels(2), 16u + 12 * 12);
}

TEST(Forward, DenseConnectivityChannelCounts) {
  const ModelConfig c;
  const Model m = init_model(c, 0);
  for (std::size_t b = 0; b < c.num_blocks; ++b)
    for (std::size_t k = 0; k < c.layers_per_block; ++k)
      EXPECT_EQ(m.blocks[b][k].weight.dim(1), c.block_input_channels(b) + k * c.growth_rate);
}

TEST(Forward, WrongInputSizeRejected) {
  const Model m = init_model(tiny(), 0);
  EXPECT_THROW(forward(m, Tensor(Shape{1, 1, 16, 8})), ShapeError);
  EXPECT_THROW(forward(m, Tensor(Shape{1, 2, 16, 16})), ShapeError);
}

TEST(Forward, SingleBlockIsPlainSigmoid) {
  ModelConfig c = tiny(1, 3);
  Model m = init_model(c, 2);
  Rng rng(2);
  perturb(m, rng);
  const ForwardOutput out = forward(m, random_images(3, c, rng));
  for (std::size_t i = 0; i < out.fused_probs.numel(); ++i)
    EXPECT_EQ(out.fused_probs[i], sigmoid(out.block_logits[0][i]));
}

TEST(Forward, FusionScalarExample) {
  std::vector<Tensor> logits{Tensor(Shape{1, 1}, 2.0), Tensor(Shape{1, 1}, -1.0), Tensor(Shape{1, 1}, 0.0)};
  const Tensor w(Shape{1, 3}, {0.5, 0.25, 0.25});
  const double p = sigmoid(fuse_logits(logits, w))[0];
  EXPECT_NEAR(p, 1.0 / (1.0 + std::exp(-0.75)), 1e-15);
  EXPECT_NEAR(p, 0.6792, 5e-5);
}

TEST(Forward, ConvexityBoundsFusedLogit) {
  ModelConfig c = tiny(3, 3);
  c.input_height = c.input_width = 32;
  Model m = init_model(c, 5);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    perturb(m, rng);
    const ForwardOutput out = forward(m, random_images(2, c, rng));
    for (std::size_t i = 0; i < out.fused_logits.numel(); ++i) {
      double lo = INFINITY, hi = -INFINITY;
      for (const auto& l : out.block_logits) {
        lo = std::min(lo, l[i]);
        hi = std::max(hi, l[i]);
      }
      const double p = out.fused_probs[i];
      const double z = std::log(p / (1.0 - p));
      EXPECT_GE(z, lo - 1e-9);
      EXPECT_LE(z, hi + 1e-9);
    }
  }
}

TEST(RelevanceWeights, ClosedForms) {
  Model m = init_model(tiny(2, 2), 0);
  m.relevance_logits.mutable_data()[0] = std::log(2.0);
  const auto w = relevance_weights(m);
  EXPECT_NEAR(w[0][0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w[0][1], 1.0 / 3.0, 1e-15);
  EXPECT_EQ(w[1][0], 0.5);
}

TEST(RelevanceWeights, RowsOnSimplex) {
  Model m = init_model(tiny(3, 4), 0);
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    for (double& v : m.relevance_logits.mutable_data()) v = rng.uniform(-50.0, 50.0);
    for (const auto& row : relevance_weights(m)) {
      double s = 0.0;
      for (double v : row) {
        EXPECT_GE(v, 0.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ClassBalance, Examples) {
  const Tensor y(Shape{4, 1}, {0.0, 0.0, 0.0, 1.0});
  EXPECT_EQ(class_balance_factors(y)[0], 0.75);
  EXPECT_EQ(class_balance_factors(Tensor(Shape{5, 1}, 1.0))[0], 0.0);
  Tensor z(Shape{100, 2});
  for (std::size_t n = 90; n < 100; ++n) z.mutable_data()[n * 2] = 1.0;
  const auto beta = class_balance_factors(z);
  EXPECT_EQ(beta[0], 0.9);
  EXPECT_EQ(beta[1], 1.0);
  EXPECT_THROW(class_balance_factors(Tensor(Shape{0, 2})), std::invalid_argument);
}

TEST(Loss, Examples) {
  const Tensor half(Shape{1, 1}, 0.5), one(Shape{1, 1}, 1.0);
  EXPECT_NEAR(loss(half, one, {0.75}).item(), 0.75 * std::log(2.0), 1e-15);
  EXPECT_NEAR(loss(half, one, {0.75}).item(), 0.5199, 5e-5);

  const Tensor p(Shape{1, 2}, {1.0, 0.0}), y(Shape{1, 2}, {1.0, 0.0});
  EXPECT_NEAR(loss(p, y, {0.5, 0.5}).item(), 0.0, 1e-11);
  const Tensor wrong(Shape{1, 2}, {0.0, 1.0});
  EXPECT_NEAR(loss(wrong, y, {0.5, 0.5}).item(), -0.5 * 2.0 * std::log(1e-12), 1e-9);
}

TEST(Loss, HalfBetaIsHalfBce) {
  Rng rng(7);
  Tensor p = random_tensor({6, 3}, rng, 0.01, 0.99);
  Tensor y(Shape{6, 3});
  for (double& v : y.mutable_data()) v = rng.bernoulli(0.5) ? 1.0 : 0.0;
  double bce = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) bce -= y[i] == 1.0 ? std::log(p[i]) : std::log(1.0 - p[i]);
  EXPECT_NEAR(loss(p, y, {0.5, 0.5, 0.5}).item(), 0.5 * bce, 1e-12);
}

TEST(Loss, Errors) {
  const Tensor p(Shape{2, 2}, 0.5);
  EXPECT_THROW(loss(p, Tensor(Shape{2, 2}, 1.0), {0.5}), std::invalid_argument);
  EXPECT_THROW(loss(p, Tensor(Shape{2, 2}, 0.5), {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(loss(p, Tensor(Shape{2, 1}, 1.0), {0.5, 0.5}), ShapeError);
}

TEST(Loss, GradientThroughProbabilities) {
  Rng rng(8);
  Tensor p = random_tensor({4, 2}, rng, 0.05, 0.95);
  Tensor y(Shape{4, 2}, {1, 0, 0, 1, 1, 1, 0, 0});
  auto r = check_gradients({p}, [&](Tape* t) { return loss(p, y, {0.3, 0.8}, t); }, 1e-6);
  EXPECT_LT(r.worst_rel, 1e-4) << r.where;
}

TEST(Loss, RelevanceLogitGradient) {
  const ModelConfig c = tiny(2, 2);
  Model m = init_model(c, 3);
  Rng rng(3);
  perturb(m, rng);
  const Tensor x = random_images(2, c, rng);
  const Tensor y(Shape{2, 2}, {1.0, 0.0, 0.0, 1.0});
  auto r = check_gradients({m.relevance_logits},
                           [&](Tape* t) { return loss(forward(m, x, t).fused_probs, y, {0.5, 0.5}, t); });
  EXPECT_LT(r.worst_rel, 1e-3) << r.where;
}

TEST(Model, CloneIsDeepAndCopyValuesRestores) {
  Model a = init_model(tiny(), 1);
  Model b = a.clone();
  b.stem.weight.mutable_data()[0] += 1.0;
  EXPECT_NE(a.stem.weight[0], b.stem.weight[0]);
  b.copy_values_from(a);
  EXPECT_EQ(a.stem.weight[0], b.stem.weight[0]);
}

TEST(Model, ParameterNames) {
  const Model m = init_model(tiny(2, 2), 0);
  const auto ps = m.parameters();
  EXPECT_EQ(ps.front().name, "stem.weight");
  EXPECT_EQ(ps.back().name, "relevance_logits");
  std::size_t total = 0;
  for (const auto& p : ps) total += p.tensor.numel();
  EXPECT_EQ(total, m.parameter_count());
}
