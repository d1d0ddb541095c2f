// DenseNet-lite classifier with one GAP + fully connected head per dense
// block. Block logits are fused per class with convex relevance weights,
// p_c = sigmoid(sum_b w_bc * l_bc), where w_c = softmax(relevance_logits[c]).
#pragma once

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "msloc/rng.hpp"
#include "msloc/tensor.hpp"

namespace msloc {

struct ModelConfig {
  std::size_t num_blocks = 3;
  std::size_t layers_per_block = 4;
  std::size_t growth_rate = 12;
  std::size_t stem_channels = 16;
  std::size_t input_height = 64;
  std::size_t input_width = 64;
  std::size_t num_classes = 2;
  std::size_t kernel_size = 3;

  /// Total downsampling from the input to the first block: a stride-2 stem
  /// convolution followed by a 2x average pool.
  static constexpr std::size_t kStemReduction = 4;

  std::size_t total_reduction() const { return kStemReduction << (num_blocks - 1); }

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw std::invalid_argument(std::string("ModelConfig.") + name + " must be positive");
    };
    positive(num_blocks, "num_blocks");
    positive(layers_per_block, "layers_per_block");
    positive(growth_rate, "growth_rate");
    positive(stem_channels, "stem_channels");
    positive(num_classes, "num_classes");
    positive(kernel_size, "kernel_size");
    if (kernel_size % 2 == 0) throw std::invalid_argument("ModelConfig.kernel_size must be odd");
    if (num_blocks > 16) throw std::invalid_argument("ModelConfig.num_blocks too large");
    const std::size_t r = total_reduction();
    if (input_height == 0 || input_height % r != 0)
      throw std::invalid_argument("ModelConfig.input_height " + std::to_string(input_height) +
                                  " must be a positive multiple of " + std::to_string(r) + " for " +
                                  std::to_string(num_blocks) + " blocks");
    if (input_width == 0 || input_width % r != 0)
      throw std::invalid_argument("ModelConfig.input_width " + std::to_string(input_width) +
                                  " must be a positive multiple of " + std::to_string(r) + " for " +
                                  std::to_string(num_blocks) + " blocks");
  }

  /// Channels entering block b (0-based).
  std::size_t block_input_channels(std::size_t b) const {
    return stem_channels + b * layers_per_block * growth_rate;
  }
  /// N_f(b): channels of the feature map a block emits.
  std::size_t block_feature_channels(std::size_t b) const { return block_input_channels(b + 1); }
  /// Spatial extent of block b's feature map.
  std::size_t block_height(std::size_t b) const { return input_height / (kStemReduction << b); }
  std::size_t block_width(std::size_t b) const { return input_width / (kStemReduction << b); }

  bool operator==(const ModelConfig&) const = default;
};

struct ConvParams {
  Tensor weight;  // [out, in, k, k]
  Tensor bias;    // [out]
};

struct HeadParams {
  Tensor weight;  // [C, N_f(b)]
  Tensor bias;    // [C]
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct Model {
  ModelConfig config;
  ConvParams stem;
  std::vector<std::vector<ConvParams>> blocks;
  std::vector<HeadParams> heads;
  Tensor relevance_logits;  // [C, B]

  /// Every trainable tensor in a fixed order. Handles alias the model.
  std::vector<NamedParam> parameters() const {
    std::vector<NamedParam> out;
    out.push_back({"stem.weight", stem.weight});
    out.push_back({"stem.bias", stem.bias});
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t k = 0; k < blocks[b].size(); ++k) {
        const std::string p = "block" + std::to_string(b) + ".layer" + std::to_string(k);
        out.push_back({p + ".weight", blocks[b][k].weight});
        out.push_back({p + ".bias", blocks[b][k].bias});
      }
    for (std::size_t b = 0; b < heads.size(); ++b) {
      out.push_back({"head" + std::to_string(b) + ".weight", heads[b].weight});
      out.push_back({"head" + std::to_string(b) + ".bias", heads[b].bias});
    }
    out.push_back({"relevance_logits", relevance_logits});
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.numel();
    return n;
  }

  void zero_grad() const {
    for (auto& p : parameters()) p.tensor.zero_grad();
  }

  /// Deep copy with independent storage.
  Model clone() const {
    Model m;
    m.config = config;
    m.stem = {stem.weight.clone(), stem.bias.clone()};
    for (const auto& blk : blocks) {
      auto& dst = m.blocks.emplace_back();
      for (const auto& l : blk) dst.push_back({l.weight.clone(), l.bias.clone()});
    }
    for (const auto& h : heads) m.heads.push_back({h.weight.clone(), h.bias.clone()});
    m.relevance_logits = relevance_logits.clone();
    return m;
  }

  /// Overwrites parameter values from another model of identical structure.
  void copy_values_from(const Model& other) {
    auto dst = parameters();
    auto src = other.parameters();
    if (dst.size() != src.size()) throw ShapeError("copy_values_from: parameter count mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) {
      if (dst[i].tensor.shape() != src[i].tensor.shape())
        throw ShapeError("copy_values_from: shape mismatch for " + dst[i].name);
      std::copy(src[i].tensor.data().begin(), src[i].tensor.data().end(), dst[i].tensor.mutable_data().begin());
    }
  }
};

namespace detail {

inline Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(-bound, bound);
  t.set_requires_grad();
  return t;
}

inline ConvParams make_conv(std::size_t in, std::size_t out, std::size_t k, Rng& rng) {
  ConvParams p;
  p.weight = xavier_uniform(Shape{out, in, k, k}, in * k * k, out * k * k, rng);
  p.bias = Tensor(Shape{out});
  p.bias.set_requires_grad();
  return p;
}

}  // namespace detail

/// Xavier-uniform weights, zero biases, zero relevance logits (w = 1/B).
inline Model init_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  Model m;
  m.config = config;
  const std::size_t k = config.kernel_size;
  m.stem = detail::make_conv(1, config.stem_channels, k, rng);
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    auto& blk = m.blocks.emplace_back();
    for (std::size_t l = 0; l < config.layers_per_block; ++l)
      blk.push_back(detail::make_conv(config.block_input_channels(b) + l * config.growth_rate,
                                      config.growth_rate, k, rng));
  }
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    const std::size_t nf = config.block_feature_channels(b);
    HeadParams h;
    h.weight = detail::xavier_uniform(Shape{config.num_classes, nf}, nf, config.num_classes, rng);
    h.bias = Tensor(Shape{config.num_classes});
    h.bias.set_requires_grad();
    m.heads.push_back(std::move(h));
  }
  m.relevance_logits = Tensor(Shape{config.num_classes, config.num_blocks});
  m.relevance_logits.set_requires_grad();
  return m;
}

/// w[c][b]: per-class softmax of the relevance logits.
inline std::vector<std::vector<double>> relevance_weights(const Model& model) {
  const Tensor w = softmax_rows(model.relevance_logits);
  const std::size_t C = w.dim(0), B = w.dim(1);
  std::vector<std::vector<double>> out(C, std::vector<double>(B));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t b = 0; b < B; ++b) out[c][b] = w[c * B + b];
  return out;
}

/// z[n,c] = sum_b weights[c,b] * block_logits[b][n,c].
inline Tensor fuse_logits(const std::vector<Tensor>& block_logits, const Tensor& weights, Tape* tape = nullptr) {
  if (block_logits.empty()) throw std::invalid_argument("fuse_logits: no block logits");
  detail::require_rank(weights, 2, "fuse_logits", "weights");
  const std::size_t B = block_logits.size();
  const std::size_t batch = block_logits[0].dim(0), C = block_logits[0].dim(1);
  if (weights.dim(0) != C || weights.dim(1) != B)
    throw ShapeError("fuse_logits: weights " + shape_str(weights.shape()) + " expected [" + std::to_string(C) +
                     "," + std::to_string(B) + "]");
  for (const auto& l : block_logits)
    if (l.shape() != block_logits[0].shape())
      throw ShapeError("fuse_logits: block logits " + shape_str(l.shape()) + " vs " +
                       shape_str(block_logits[0].shape()));
  Tensor out(Shape{batch, C});
  auto o = out.mutable_data();
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      double z = 0.0;
      for (std::size_t b = 0; b < B; ++b) z += weights[c * B + b] * block_logits[b][n * C + c];
      o[n * C + c] = z;
    }
  const bool any_logit_grad =
      std::any_of(block_logits.begin(), block_logits.end(), [](const Tensor& t) { return t.requires_grad(); });
  if (tape && (any_logit_grad || weights.requires_grad())) {
    out.set_requires_grad();
    tape->record(out, [logits = block_logits, w = weights, o = out, batch, C, B]() mutable {
      if (!o.has_grad()) return;
      auto go = o.grad();
      for (std::size_t b = 0; b < B; ++b) {
        if (!logits[b].requires_grad()) continue;
        auto gl = logits[b].mutable_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < C; ++c) gl[n * C + c] += go[n * C + c] * w[c * B + b];
      }
      if (w.requires_grad()) {
        auto gw = w.mutable_grad();
        for (std::size_t n = 0; n < batch; ++n)
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t b = 0; b < B; ++b) gw[c * B + b] += go[n * C + c] * logits[b][n * C + c];
      }
    });
  }
  return out;
}

struct ForwardOutput {
  std::vector<Tensor> block_features;  // F_b: [n, N_f(b), h_b, w_b]
  std::vector<Tensor> block_logits;    // l_b: [n, C]
  Tensor relevance;                    // w: [C, B]
  Tensor fused_logits;                 // [n, C]
  Tensor fused_probs;                  // p: [n, C]
};

/// Runs the classifier on images [n,1,H,W]. Pass a tape to record adjoints.
inline ForwardOutput forward(const Model& model, const Tensor& images, Tape* tape = nullptr) {
  const auto& cfg = model.config;
  detail::require_rank(images, 4, "forward", "images");
  if (images.dim(1) != 1 || images.dim(2) != cfg.input_height || images.dim(3) != cfg.input_width)
    throw ShapeError("forward: images " + shape_str(images.shape()) + " do not match model input [n,1," +
                     std::to_string(cfg.input_height) + "," + std::to_string(cfg.input_width) + "]");
  const std::size_t pad = cfg.kernel_size / 2;

  ForwardOutput out;
  Tensor x = relu(conv2d(images, model.stem.weight, model.stem.bias, 2, pad, tape), tape);
  x = avg_pool2d(x, 2, tape);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    if (b > 0) x = avg_pool2d(x, 2, tape);
    std::vector<Tensor> maps{x};
    for (const auto& layer : model.blocks[b]) {
      Tensor input = maps.size() == 1 ? maps[0] : concat_channels(maps, tape);
      maps.push_back(relu(conv2d(input, layer.weight, layer.bias, 1, pad, tape), tape));
    }
    x = concat_channels(maps, tape);
    out.block_features.push_back(x);
    out.block_logits.push_back(
        fully_connected(global_avg_pool(x, tape), model.heads[b].weight, model.heads[b].bias, tape));
  }
  out.relevance = softmax_rows(model.relevance_logits, tape);
  out.fused_logits = fuse_logits(out.block_logits, out.relevance, tape);
  out.fused_probs = sigmoid(out.fused_logits, tape);
  return out;
}

/// beta_c = fraction of samples whose label for class c is 0. labels: [N, C].
inline std::vector<double> class_balance_factors(const Tensor& labels) {
  detail::require_rank(labels, 2, "class_balance_factors", "labels");
  const std::size_t N = labels.dim(0), C = labels.dim(1);
  if (N == 0) throw std::invalid_argument("class_balance_factors: empty label set");
  std::vector<double> beta(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    std::size_t zeros = 0;
    for (std::size_t n = 0; n < N; ++n) zeros += labels[n * C + c] == 0.0 ? 1 : 0;
    beta[c] = static_cast<double>(zeros) / static_cast<double>(N);
  }
  return beta;
}

inline constexpr double kLogClamp = 1e-12;

/// Class-balanced cross entropy summed over batch and classes:
/// -beta_c * y log p - (1 - beta_c)(1 - y) log(1 - p), log arguments clamped at 1e-12.
inline Tensor loss(const Tensor& fused_probs, const Tensor& labels, const std::vector<double>& beta,
                   Tape* tape = nullptr) {
  detail::require_rank(fused_probs, 2, "loss", "probabilities");
  if (labels.shape() != fused_probs.shape())
    throw ShapeError("loss: labels " + shape_str(labels.shape()) + " do not match probabilities " +
                     shape_str(fused_probs.shape()));
  const std::size_t N = fused_probs.dim(0), C = fused_probs.dim(1);
  if (beta.size() != C)
    throw std::invalid_argument("loss: beta has " + std::to_string(beta.size()) + " entries, expected " +
                                std::to_string(C));
  for (double y : labels.data())
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("loss: labels must be exactly 0 or 1");

  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t c = 0; c < C; ++c) {
      const double p = fused_probs[n * C + c];
      if (labels[n * C + c] == 1.0)
        total -= beta[c] * std::log(std::max(p, kLogClamp));
      else
        total -= (1.0 - beta[c]) * std::log(std::max(1.0 - p, kLogClamp));
    }
  Tensor out = Tensor::scalar(total);
  if (detail::recording(tape, {&fused_probs})) {
    out.set_requires_grad();
    tape->record(out, [probs = fused_probs, y = labels, beta, o = out, N, C]() mutable {
      if (!o.has_grad()) return;
      const double g0 = o.grad()[0];
      auto g = probs.mutable_grad();
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const std::size_t i = n * C + c;
          const double p = probs[i];
          if (y[i] == 1.0) {
            if (p > kLogClamp) g[i] -= g0 * beta[c] / p;
          } else if (1.0 - p > kLogClamp) {
            g[i] += g0 * (1.0 - beta[c]) / (1.0 - p);
          }
        }
    });
  }
  return out;
}

/// Stacks a subset of images (each H*W, values in [0,1]) into [n,1,H,W].
inline Tensor stack_images(const std::vector<const std::vector<double>*>& images, std::size_t height,
                           std::size_t width) {
  Tensor out(Shape{images.size(), 1, height, width});
  auto d = out.mutable_data();
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i]->size() != height * width)
      throw ShapeError("stack_images: image " + std::to_string(i) + " has " + std::to_string(images[i]->size()) +
                       " pixels, expected " + std::to_string(height * width));
    std::copy(images[i]->begin(), images[i]->end(), d.begin() + static_cast<std::ptrdiff_t>(i * height * width));
  }
  return out;
}

}  // namespace msloc
