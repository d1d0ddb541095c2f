// Attention map -> boxes, and IOU-based localization scoring.
//
// An image counts as localized for class c at threshold T when greedy
// one-to-one matching (pairs taken by descending IOU, only pairs with
// IOU > T eligible) matches at least one predicted box. Every unmatched
// predicted box is a false positive. Both rates are over the images that
// carry at least one ground-truth box of the class.
#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "msloc/attention.hpp"
#include "msloc/bbox.hpp"
#include "msloc/tensor.hpp"

namespace msloc {

struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> on;

  bool operator()(std::size_t r, std::size_t c) const { return on[r * cols + c] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(on.begin(), on.end(), 1)); }
};

struct Pixel {
  int x = 0;
  int y = 0;
  bool operator==(const Pixel&) const = default;
};

using Component = std::vector<Pixel>;

struct Detection {
  BBox bbox;
  std::size_t class_id = 0;
  double score = 0.0;
  bool operator==(const Detection&) const = default;
};

/// True where the min-max normalized value reaches tau. A constant map is all
/// true unless it is identically zero, which yields an empty mask.
inline Mask binarize(const Grid& map, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw std::invalid_argument("binarize: tau must lie in (0,1)");
  Mask m{map.rows, map.cols, std::vector<std::uint8_t>(map.values.size(), 0)};
  if (map.values.empty()) return m;
  const double lo = map.min(), hi = map.max();
  if (hi == lo) {
    if (hi != 0.0) std::fill(m.on.begin(), m.on.end(), 1);
    return m;
  }
  for (std::size_t i = 0; i < map.values.size(); ++i)
    m.on[i] = (map.values[i] - lo) / (hi - lo) >= tau ? 1 : 0;
  return m;
}

inline Mask binarize(const AttentionMap& map, double tau) { return binarize(map.grid, tau); }

/// 8-connected components, ordered by their first pixel in raster order.
inline std::vector<Component> connected_components(const Mask& mask) {
  std::vector<Component> out;
  std::vector<std::uint8_t> seen(mask.on.size(), 0);
  const int rows = static_cast<int>(mask.rows), cols = static_cast<int>(mask.cols);
  std::vector<Pixel> stack;
  for (int y = 0; y < rows; ++y)
    for (int x = 0; x < cols; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * mask.cols + static_cast<std::size_t>(x);
      if (!mask.on[i] || seen[i]) continue;
      Component comp;
      seen[i] = 1;
      stack.push_back({x, y});
      while (!stack.empty()) {
        const Pixel p = stack.back();
        stack.pop_back();
        comp.push_back(p);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int nx = p.x + dx, ny = p.y + dy;
            if (nx < 0 || ny < 0 || nx >= cols || ny >= rows) continue;
            const std::size_t j = static_cast<std::size_t>(ny) * mask.cols + static_cast<std::size_t>(nx);
            if (mask.on[j] && !seen[j]) {
              seen[j] = 1;
              stack.push_back({nx, ny});
            }
          }
      }
      std::sort(comp.begin(), comp.end(), [](const Pixel& a, const Pixel& b) { return std::tie(a.y, a.x) < std::tie(b.y, b.x); });
      out.push_back(std::move(comp));
    }
  return out;
}

inline BBox tight_box(const Component& comp) {
  int x0 = comp.front().x, x1 = x0, y0 = comp.front().y, y1 = y0;
  for (const auto& p : comp) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

/// One tight box per component of at least `min_area` pixels, scored by the
/// peak normalized value inside the box, best first.
inline std::vector<Detection> boxes_from_map(const Grid& map, std::size_t class_id, double tau, std::size_t min_area) {
  const Mask mask = binarize(map, tau);
  const double lo = map.values.empty() ? 0.0 : map.min(), hi = map.values.empty() ? 0.0 : map.max();
  std::vector<Detection> out;
  for (const auto& comp : connected_components(mask)) {
    if (comp.size() < min_area) continue;
    const BBox box = tight_box(comp);
    double peak = 0.0;
    for (int y = box.y; y < box.bottom(); ++y)
      for (int x = box.x; x < box.right(); ++x) {
        const double v = map(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        peak = std::max(peak, hi > lo ? (v - lo) / (hi - lo) : 1.0);
      }
    out.push_back({box, class_id, peak});
  }
  std::stable_sort(out.begin(), out.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  return out;
}

inline std::vector<Detection> boxes_from_map(const AttentionMap& map, double tau, std::size_t min_area) {
  return boxes_from_map(map.grid, map.class_id, tau, min_area);
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
  std::size_t class_id = 0;
  std::string class_name;
  double iou_threshold = 0.0;
  double accuracy = 0.0;
  double afp = 0.0;
  std::size_t n_images = 0;
  std::size_t n_correct = 0;
  std::size_t n_false_positives = 0;

  bool operator==(const EvalRow&) const = default;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // class-major, thresholds ascending

  const EvalRow& at(std::size_t class_id, double threshold) const {
    for (const auto& r : rows)
      if (r.class_id == class_id && r.iou_threshold == threshold) return r;
    throw std::out_of_range("no report row for class " + std::to_string(class_id) + " at threshold " +
                            std::to_string(threshold));
  }
  bool operator==(const EvalReport&) const = default;
};

/// Number of predicted boxes matched by greedy one-to-one assignment with IOU > threshold.
inline std::size_t greedy_matches(const std::vector<BBox>& preds, const std::vector<BBox>& gts, double threshold) {
  struct Pair {
    double iou;
    std::size_t p, g;
  };
  std::vector<Pair> pairs;
  for (std::size_t p = 0; p < preds.size(); ++p)
    for (std::size_t g = 0; g < gts.size(); ++g)
      if (const double v = iou(preds[p], gts[g]); v > threshold) pairs.push_back({v, p, g});
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) { return a.iou > b.iou; });
  std::vector<std::uint8_t> pused(preds.size(), 0), gused(gts.size(), 0);
  std::size_t matched = 0;
  for (const auto& pr : pairs) {
    if (pused[pr.p] || gused[pr.g]) continue;
    pused[pr.p] = gused[pr.g] = 1;
    ++matched;
  }
  return matched;
}

/// Scores detections against ground truth. `detections[i]` and
/// `ground_truth[i]` belong to image i.
inline EvalReport evaluate(const std::vector<std::vector<Detection>>& detections,
                           const std::vector<std::vector<LabeledBox>>& ground_truth,
                           const std::vector<std::string>& class_names, std::vector<double> thresholds = {0.3, 0.5}) {
  const std::size_t C = class_names.size();
  if (detections.size() != ground_truth.size())
    throw std::invalid_argument("evaluate: " + std::to_string(detections.size()) + " detection lists for " +
                                std::to_string(ground_truth.size()) + " images");
  if (thresholds.empty()) throw std::invalid_argument("evaluate: no IOU thresholds");
  std::sort(thresholds.begin(), thresholds.end());
  for (const auto& per : detections)
    for (const auto& d : per)
      if (d.class_id >= C)
        throw std::invalid_argument("evaluate: detection class " + std::to_string(d.class_id) + " not among " +
                                    std::to_string(C) + " configured classes");
  for (const auto& per : ground_truth)
    for (const auto& g : per)
      if (g.class_id < 0 || static_cast<std::size_t>(g.class_id) >= C)
        throw std::invalid_argument("evaluate: ground-truth class " + std::to_string(g.class_id) + " not among " +
                                    std::to_string(C) + " configured classes");

  EvalReport report;
  for (std::size_t c = 0; c < C; ++c) {
    for (double t : thresholds) {
      EvalRow row;
      row.class_id = c;
      row.class_name = class_names[c];
      row.iou_threshold = t;
      for (std::size_t i = 0; i < ground_truth.size(); ++i) {
        std::vector<BBox> gts, preds;
        for (const auto& g : ground_truth[i])
          if (static_cast<std::size_t>(g.class_id) == c) gts.push_back(g.box);
        if (gts.empty()) continue;
        for (const auto& d : detections[i])
          if (d.class_id == c) preds.push_back(d.bbox);
        const std::size_t matched = greedy_matches(preds, gts, t);
        ++row.n_images;
        row.n_correct += matched > 0 ? 1 : 0;
        row.n_false_positives += preds.size() - matched;
      }
      if (row.n_images > 0) {
        row.accuracy = static_cast<double>(row.n_correct) / static_cast<double>(row.n_images);
        row.afp = static_cast<double>(row.n_false_positives) / static_cast<double>(row.n_images);
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

inline void write_report_csv(std::ostream& os, const EvalReport& r) {
  os << "class,iou_threshold,accuracy,afp,n_images\n";
  char buf[128];
  for (const auto& row : r.rows) {
    std::snprintf(buf, sizeof buf, "%.2f,%.6f,%.6f,%zu", row.iou_threshold, row.accuracy, row.afp, row.n_images);
    os << row.class_name << ',' << buf << '\n';
  }
}

inline nlohmann::ordered_json report_json(const EvalReport& r) {
  auto arr = nlohmann::ordered_json::array();
  for (const auto& row : r.rows)
    arr.push_back({{"class", row.class_name},
                   {"iou_threshold", row.iou_threshold},
                   {"accuracy", row.accuracy},
                   {"afp", row.afp},
                   {"n_images", row.n_images},
                   {"n_correct", row.n_correct},
                   {"n_false_positives", row.n_false_positives}});
  return arr;
}

}  // namespace msloc
