#pragma once

#include <algorithm>
#include <cstdint>

namespace msloc {

/// Axis-aligned pixel rectangle covering columns [x, x+w) and rows [y, y+h).
struct BBox {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  std::int64_t area() const { return static_cast<std::int64_t>(w) * h; }
  int right() const { return x + w; }
  int bottom() const { return y + h; }
  bool contains(int px, int py) const { return px >= x && px < right() && py >= y && py < bottom(); }
  bool operator==(const BBox&) const = default;
};

struct LabeledBox {
  int class_id = 0;
  BBox box;
  bool operator==(const LabeledBox&) const = default;
};

/// Intersection over union in pixel area.
inline double iou(const BBox& a, const BBox& b) {
  const int iw = std::min(a.right(), b.right()) - std::max(a.x, b.x);
  const int ih = std::min(a.bottom(), b.bottom()) - std::max(a.y, b.y);
  if (iw <= 0 || ih <= 0) return 0.0;
  const std::int64_t inter = static_cast<std::int64_t>(iw) * ih;
  return static_cast<double>(inter) / static_cast<double>(a.area() + b.area() - inter);
}

}  // namespace msloc
