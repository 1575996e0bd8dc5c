#pragma once

#include <algorithm>
#include <optional>

#include "attflow/image.hpp"

namespace attflow {

// Axis-aligned pixel box: columns [x, x+w), rows [y, y+h). Stored unclipped.
struct BoundingBox {
  int x = 0, y = 0, w = 1, h = 1;

  // Center in pixel-index coordinates (pixel i has its center at i).
  Point center() const { return {x + (w - 1) / 2.0, y + (h - 1) / 2.0}; }
  long area() const { return long(w) * long(h); }
  bool contains(double px, double py) const {
    return px >= x && px <= x + w - 1 && py >= y && py <= y + h - 1;
  }
  // Intersection with a width x height image, if non-empty.
  std::optional<BoundingBox> clipped(int width, int height) const {
    const int x0 = std::max(x, 0), y0 = std::max(y, 0);
    const int x1 = std::min(x + w, width), y1 = std::min(y + h, height);
    if (x1 <= x0 || y1 <= y0) return std::nullopt;
    return BoundingBox{x0, y0, x1 - x0, y1 - y0};
  }
  bool operator==(const BoundingBox&) const = default;
};

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const int x0 = std::max(a.x, b.x), y0 = std::max(a.y, b.y);
  const int x1 = std::min(a.x + a.w, b.x + b.w), y1 = std::min(a.y + a.h, b.y + b.h);
  const double inter = (x1 > x0 && y1 > y0) ? double(x1 - x0) * double(y1 - y0) : 0.0;
  const double uni = double(a.area()) + double(b.area()) - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace attflow
