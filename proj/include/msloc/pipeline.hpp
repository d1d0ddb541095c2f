// Dataset-level localization: classify each test image, build an attention
// map for every class predicted present, extract boxes, and score them.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "msloc/attention.hpp"
#include "msloc/localization.hpp"
#include "msloc/model.hpp"
#include "msloc/synthdata.hpp"

namespace msloc {

enum class MapMode { multiscale, final_block };

inline const char* to_string(MapMode m) { return m == MapMode::multiscale ? "multiscale" : "final_block"; }

inline MapMode map_mode_from_string(const std::string& s) {
  if (s == "multiscale") return MapMode::multiscale;
  if (s == "final_block") return MapMode::final_block;
  throw std::invalid_argument("unknown mode '" + s + "' (valid modes: multiscale, final_block)");
}

struct LocalizationParams {
  double tau = 0.5;
  std::size_t min_area = 4;
  double report_threshold = 0.5;  // localize classes whose fused probability reaches this
  bool normalize = true;
  std::vector<double> iou_thresholds{0.3, 0.5};
};

inline AttentionMap attention_for(const Model& model, const ForwardOutput& fwd, std::size_t sample, std::size_t cls,
                                  MapMode mode, bool normalize) {
  return mode == MapMode::multiscale ? multiscale_map(model, fwd, sample, cls, normalize)
                                     : final_block_map(model, fwd, sample, cls, normalize);
}

/// Detections for every image of `ds`, in dataset order.
inline std::vector<std::vector<Detection>> localize_dataset(const Model& model, const Dataset& ds, MapMode mode,
                                                            const LocalizationParams& params, std::size_t chunk = 32) {
  std::vector<std::vector<Detection>> out(ds.size());
  const std::size_t C = model.config.num_classes;
  for (std::size_t start = 0; start < ds.size(); start += chunk) {
    const std::size_t end = std::min(ds.size(), start + chunk);
    std::vector<const std::vector<double>*> imgs;
    for (std::size_t i = start; i < end; ++i) imgs.push_back(&ds.samples[i].image);
    const ForwardOutput fwd = forward(model, stack_images(imgs, ds.height, ds.width));
    for (std::size_t i = start; i < end; ++i)
      for (std::size_t c = 0; c < C; ++c) {
        if (fwd.fused_probs[(i - start) * C + c] < params.report_threshold) continue;
        const auto map = attention_for(model, fwd, i - start, c, mode, params.normalize);
        for (auto& d : boxes_from_map(map, params.tau, params.min_area)) out[i].push_back(d);
      }
  }
  return out;
}

/// Localizes a test split and scores it against its ground-truth boxes.
inline EvalReport evaluate_dataset(const Model& model, const Dataset& test, MapMode mode,
                                   const LocalizationParams& params) {
  std::vector<std::vector<LabeledBox>> gts;
  for (const auto& s : test.samples) {
    if (!s.gt_boxes) throw std::invalid_argument("evaluate_dataset: sample without ground-truth boxes");
    gts.push_back(*s.gt_boxes);
  }
  return evaluate(localize_dataset(model, test, mode, params), gts, test.class_names, params.iou_thresholds);
}

}  // namespace msloc
