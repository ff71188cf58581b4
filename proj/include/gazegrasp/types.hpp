#pragma once

#include <cmath>
#include <cstdint>

namespace gazegrasp {

/// Producer-side timestamp in milliseconds.
using TimestampMs = std::int64_t;

/// Screen-space point in pixels. Also used for camera pixels where the
/// context makes the frame clear.
struct ScreenPoint {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const ScreenPoint&, const ScreenPoint&) = default;
};

using PixelPoint = ScreenPoint;

inline double distance(ScreenPoint a, ScreenPoint b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

inline bool is_finite(ScreenPoint p) {
  return std::isfinite(p.x) && std::isfinite(p.y);
}

}  // namespace gazegrasp
