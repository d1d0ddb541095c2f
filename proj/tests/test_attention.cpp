#include <gtest/gtest.h>

#include <cmath>

#include "msloc/attention.hpp"
#include "support/fd.hpp"

using namespace msloc;
using msloc::testing::random_tensor;

namespace {

ModelConfig small_config(std::size_t blocks = 3) {
  ModelConfig c;
  c.num_blocks = blocks;
  c.layers_per_block = 2;
  c.growth_rate = 4;
  c.stem_channels = 6;
  c.input_height = 32;
  c.input_width = 32;
  c.num_classes = 2;
  return c;
}

Model perturbed(const ModelConfig& c, std::uint64_t seed) {
  Model m = init_model(c, seed);
  Rng rng(seed + 100);
  for (auto& h : m.heads)
    for (double& v : h.bias.mutable_data()) v = rng.uniform(-1, 1);
  for (double& v : m.relevance_logits.mutable_data()) v = rng.uniform(-1, 1);
  return m;
}

Tensor image(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  return random_tensor({1, 1, c.input_height, c.input_width}, rng, 0.0, 1.0);
}

double mean(const Grid& g) {
  double s = 0.0;
  for (double v : g.values) s += v;
  return s / static_cast<double>(g.values.size());
}

std::size_t argmax(const Grid& g) {
  return static_cast<std::size_t>(std::max_element(g.values.begin(), g.values.end()) - g.values.begin());
}

}  // namespace

TEST(BlockCam, MeanPlusBiasIsBlockLogit) {
  const ModelConfig c = small_config();
  const Model m = perturbed(c, 1);
  Rng rng(2);
  const Tensor x = random_tensor({3, 1, 32, 32}, rng, 0.0, 1.0);
  const ForwardOutput out = forward(m, x);
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t b = 0; b < c.num_blocks; ++b)
      for (std::size_t k = 0; k < c.num_classes; ++k) {
        const Grid cam = block_cam(m, out.block_features[b], b, k, n);
        EXPECT_EQ(cam.rows, c.block_height(b));
        EXPECT_NEAR(mean(cam) + m.heads[b].bias[k], out.block_logits[b][n * 2 + k], 1e-9);
      }
}

TEST(BlockCam, SelectorWeightsPickOneFeatureMap) {
  const ModelConfig c = small_config();
  Model m = init_model(c, 3);
  const ForwardOutput out = forward(m, image(c, 3));
  const std::size_t b = 1, j = 5, channels = c.block_feature_channels(b);
  auto w = m.heads[b].weight.mutable_data();
  std::fill(w.begin(), w.end(), 0.0);
  w[1 * channels + j] = 1.0;
  const Grid cam = block_cam(m, out.block_features[b], b, 1);
  const Tensor& f = out.block_features[b];
  const std::size_t plane = cam.values.size();
  for (std::size_t p = 0; p < plane; ++p) EXPECT_EQ(cam.values[p], f[j * plane + p]);
  const Grid zero = block_cam(m, out.block_features[b], b, 0);
  for (double v : zero.values) EXPECT_EQ(v, 0.0);
}

TEST(BlockCam, LinearInHeadWeights) {
  const ModelConfig c = small_config();
  Model m = init_model(c, 4);
  const ForwardOutput out = forward(m, image(c, 4));
  const Grid base = block_cam(m, out.block_features[2], 2, 0);
  for (double& v : m.heads[2].weight.mutable_data()) v *= -2.5;
  const Grid scaled = block_cam(m, out.block_features[2], 2, 0);
  for (std::size_t i = 0; i < base.values.size(); ++i) EXPECT_NEAR(scaled.values[i], -2.5 * base.values[i], 1e-12);
}

TEST(BlockCam, RangeErrors) {
  const ModelConfig c = small_config();
  const Model m = init_model(c, 5);
  const ForwardOutput out = forward(m, image(c, 5));
  EXPECT_THROW(block_cam(m, out.block_features[0], 3, 0), std::out_of_range);
  EXPECT_THROW(block_cam(m, out.block_features[0], 0, 2), std::out_of_range);
  EXPECT_THROW(block_cam(m, out.block_features[0], 0, 0, 1), std::out_of_range);
  EXPECT_THROW(block_cam(m, out.block_features[1], 0, 0), ShapeError);
}

TEST(Multiscale, SingleBlockRawEqualsResizedCam) {
  const ModelConfig c = small_config(1);
  const Model m = perturbed(c, 6);
  const Tensor x = image(c, 6);
  const ForwardOutput out = forward(m, x);
  for (std::size_t k = 0; k < 2; ++k) {
    const AttentionMap a = multiscale_map(m, x, k, false);
    EXPECT_EQ(a.grid, bilinear_resize(block_cam(m, out.block_features[0], 0, k), 32, 32));
    EXPECT_EQ(a.grid, final_block_map(m, x, k, false).grid);
    EXPECT_EQ(multiscale_map(m, x, k, true).grid, final_block_map(m, x, k, true).grid);
  }
}

TEST(Multiscale, VertexWeightSelectsBlock) {
  const ModelConfig c = small_config();
  Model m = perturbed(c, 7);
  const Tensor x = image(c, 7);
  auto a = m.relevance_logits.mutable_data();
  a[0] = 800.0, a[1] = 0.0, a[2] = 0.0;
  ASSERT_EQ(relevance_weights(m)[0][0], 1.0);
  const ForwardOutput out = forward(m, x);
  const Grid expect = bilinear_resize(block_cam(m, out.block_features[0], 0, 0), 32, 32);
  const AttentionMap got = multiscale_map(m, x, 0, false);
  EXPECT_EQ(got.grid, expect);
  EXPECT_EQ(argmax(got.grid), argmax(expect));
  EXPECT_EQ(got.source, MapSource::multiscale);
}

TEST(Multiscale, NormalizedMatchesHandCombination) {
  const ModelConfig c = small_config();
  const Model m = perturbed(c, 8);
  const Tensor x = image(c, 8);
  const ForwardOutput out = forward(m, x);
  const auto w = relevance_weights(m);
  for (std::size_t k = 0; k < 2; ++k) {
    const AttentionMap s = multiscale_map(m, out, 0, k, true);
    std::vector<Grid> norm;
    double lo = INFINITY, hi = -INFINITY;
    for (std::size_t b = 0; b < 3; ++b) {
      const Grid r = bilinear_resize(block_cam(m, out.block_features[b], b, k), 32, 32);
      Grid n(32, 32);
      const double rmin = r.min(), rmax = r.max();
      for (std::size_t i = 0; i < r.values.size(); ++i) n.values[i] = (r.values[i] - rmin) / (rmax - rmin);
      lo = std::min(lo, n.min());
      hi = std::max(hi, n.max());
      norm.push_back(n);
    }
    EXPECT_GE(s.grid.min(), 0.0);
    EXPECT_LE(s.grid.max(), 1.0);
    EXPECT_GE(s.grid.min(), lo);
    EXPECT_LE(s.grid.max(), hi);
    Rng rng(k);
    for (int t = 0; t < 5; ++t) {
      const std::size_t r = rng.below(32), col = rng.below(32);
      double v = 0.0;
      for (std::size_t b = 0; b < 3; ++b) v += w[k][b] * norm[b](r, col);
      EXPECT_NEAR(s.grid(r, col), v, 1e-12);
    }
  }
}

TEST(FinalBlock, EqualsMultiscaleAtLastVertex) {
  const ModelConfig c = small_config();
  Model m = perturbed(c, 9);
  const Tensor x = image(c, 9);
  const AttentionMap fb = final_block_map(m, x, 1, true);
  EXPECT_EQ(fb.source, MapSource::single_block);
  EXPECT_EQ(fb.block, 2u);
  auto a = m.relevance_logits.mutable_data();
  a[3] = -800.0, a[4] = -800.0, a[5] = 0.0;
  EXPECT_EQ(multiscale_map(m, x, 1, true).grid, fb.grid);
  EXPECT_EQ(multiscale_map(m, x, 1, false).grid, final_block_map(m, x, 1, false).grid);
}

TEST(FinalBlock, ArgmaxInStrongestCell) {
  ModelConfig c = small_config();
  c.input_height = c.input_width = 64;
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const Model m = perturbed(c, seed);
    const Tensor x = image(c, seed);
    const ForwardOutput out = forward(m, x);
    const Grid cam = block_cam(m, out.block_features[2], 2, 0);
    const Grid up = final_block_map(m, x, 0, false).grid;
    ASSERT_EQ(cam.rows, 4u);
    const std::size_t ci = argmax(cam), ui = argmax(up);
    const double scale = static_cast<double>(cam.rows - 1) / 63.0;
    const double sy = static_cast<double>(ui / 64) * scale, sx = static_cast<double>(ui % 64) * scale;
    const double cy = static_cast<double>(ci / cam.cols), cx = static_cast<double>(ci % cam.cols);
    EXPECT_LE(std::abs(sy - cy), 0.5) << seed;
    EXPECT_LE(std::abs(sx - cx), 0.5) << seed;
  }
}

TEST(MinmaxNormalize, ConstantBecomesZero) {
  const Grid g = minmax_normalize(Grid(3, 3, 4.2));
  for (double v : g.values) EXPECT_EQ(v, 0.0);
  const Grid r = minmax_normalize(Grid(1, 3, {-1.0, 0.0, 3.0}));
  EXPECT_EQ(r.values, (std::vector<double>{0.0, 0.25, 1.0}));
}

TEST(ConvexCombine, Errors) {
  EXPECT_THROW(convex_combine({Grid(2, 2)}, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(convex_combine({Grid(2, 2), Grid(2, 3)}, {0.5, 0.5}), ShapeError);
}
