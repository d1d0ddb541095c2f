// Class activation maps per dense block and their relevance-weighted fusion
// into a multiscale attention map at input resolution.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/model.hpp"
#include "msloc/tensor.hpp"

namespace msloc {

enum class MapSource { single_block, multiscale };

struct AttentionMap {
  std::size_t class_id = 0;
  Grid grid;
  MapSource source = MapSource::multiscale;
  std::size_t block = 0;  // meaningful for single_block maps
};

namespace detail {

inline void check_block_class(const Model& model, std::size_t block, std::size_t cls) {
  if (block >= model.config.num_blocks)
    throw std::out_of_range("block " + std::to_string(block) + " out of range for a " +
                            std::to_string(model.config.num_blocks) + "-block model");
  if (cls >= model.config.num_classes)
    throw std::out_of_range("class " + std::to_string(cls) + " out of range for " +
                            std::to_string(model.config.num_classes) + " classes");
}

}  // namespace detail

/// S_b^c = sum_j V_j^c(b) F_j^b for one sample's block features. Accepts
/// [N_f, h, w] or [n, N_f, h, w] with `sample` selecting the batch entry.
/// The head bias is not part of the map.
inline Grid block_cam(const Model& model, const Tensor& features, std::size_t block, std::size_t cls,
                      std::size_t sample = 0) {
  detail::check_block_class(model, block, cls);
  std::size_t channels, h, w, offset;
  if (features.rank() == 3) {
    if (sample != 0) throw std::out_of_range("block_cam: sample index on an unbatched feature map");
    channels = features.dim(0), h = features.dim(1), w = features.dim(2), offset = 0;
  } else if (features.rank() == 4) {
    if (sample >= features.dim(0)) throw std::out_of_range("block_cam: sample index out of range");
    channels = features.dim(1), h = features.dim(2), w = features.dim(3);
    offset = sample * channels * h * w;
  } else {
    throw ShapeError("block_cam: features must have rank 3 or 4, got " + shape_str(features.shape()));
  }
  const Tensor& head = model.heads[block].weight;
  if (head.dim(1) != channels)
    throw ShapeError("block_cam: features carry " + std::to_string(channels) + " channels, head of block " +
                     std::to_string(block) + " expects " + std::to_string(head.dim(1)));
  const std::size_t plane = h * w;
  Grid cam(h, w);
  const double* f = features.data().data() + offset;
  const double* v = head.data().data() + cls * channels;
  for (std::size_t j = 0; j < channels; ++j) {
    const double vj = v[j];
    const double* fj = f + j * plane;
    for (std::size_t p = 0; p < plane; ++p) cam.values[p] += vj * fj[p];
  }
  return cam;
}

/// Min-max scaling to [0,1]; a constant grid becomes all zeros.
inline Grid minmax_normalize(const Grid& g) {
  Grid out(g.rows, g.cols);
  const double lo = g.min(), hi = g.max();
  if (hi > lo)
    for (std::size_t i = 0; i < g.values.size(); ++i) out.values[i] = (g.values[i] - lo) / (hi - lo);
  return out;
}

/// Block CAMs resized to input resolution (and min-max scaled when `normalize`).
inline std::vector<Grid> resized_block_cams(const Model& model, const ForwardOutput& fwd, std::size_t sample,
                                            std::size_t cls, bool normalize) {
  std::vector<Grid> maps;
  for (std::size_t b = 0; b < model.config.num_blocks; ++b) {
    Grid r = bilinear_resize(block_cam(model, fwd.block_features[b], b, cls, sample), model.config.input_height,
                             model.config.input_width);
    maps.push_back(normalize ? minmax_normalize(r) : std::move(r));
  }
  return maps;
}

/// sum_b weights[b] * maps[b], accumulated in block order.
inline Grid convex_combine(const std::vector<Grid>& maps, const std::vector<double>& weights) {
  if (maps.empty() || maps.size() != weights.size())
    throw std::invalid_argument("convex_combine: need one weight per map");
  Grid out(maps[0].rows, maps[0].cols);
  for (std::size_t b = 0; b < maps.size(); ++b) {
    if (maps[b].rows != out.rows || maps[b].cols != out.cols)
      throw ShapeError("convex_combine: map extents differ");
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += weights[b] * maps[b].values[i];
  }
  return out;
}

/// S_c = sum_b w_b^c R(S_b^c) from an existing forward pass.
inline AttentionMap multiscale_map(const Model& model, const ForwardOutput& fwd, std::size_t sample, std::size_t cls,
                                   bool normalize = true) {
  detail::check_block_class(model, 0, cls);
  const auto w = relevance_weights(model);
  return {cls, convex_combine(resized_block_cams(model, fwd, sample, cls, normalize), w[cls]), MapSource::multiscale,
          0};
}

/// Deepest block's resized CAM alone (the final-block baseline).
inline AttentionMap final_block_map(const Model& model, const ForwardOutput& fwd, std::size_t sample,
                                    std::size_t cls, bool normalize = true) {
  const std::size_t last = model.config.num_blocks - 1;
  detail::check_block_class(model, last, cls);
  std::vector<Grid> maps{bilinear_resize(block_cam(model, fwd.block_features[last], last, cls, sample),
                                         model.config.input_height, model.config.input_width)};
  if (normalize) maps[0] = minmax_normalize(maps[0]);
  return {cls, convex_combine(maps, {1.0}), MapSource::single_block, last};
}

/// Single image [1,1,H,W] convenience forms.
inline AttentionMap multiscale_map(const Model& model, const Tensor& image, std::size_t cls, bool normalize = true) {
  return multiscale_map(model, forward(model, image), 0, cls, normalize);
}

inline AttentionMap final_block_map(const Model& model, const Tensor& image, std::size_t cls, bool normalize = true) {
  return final_block_map(model, forward(model, image), 0, cls, normalize);
}

}  // namespace msloc
