#pragma once

// Detected objects and magnetic snapping of the gaze cursor.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"

namespace gazegrasp {

using ObjectId = std::uint32_t;

/// Axis-aligned box given by center and extents. Containment is closed.
struct BBox {
  ObjectId id = 0;
  std::string label;
  double x_c = 0.0;
  double y_c = 0.0;
  double w = 1.0;
  double h = 1.0;

  ScreenPoint center() const { return {x_c, y_c}; }
  double area() const { return w * h; }

  /// `inflate` is a fractional growth of both extents (0.1 = 10%).
  bool contains(ScreenPoint p, double inflate = 0.0) const {
    const double hw = 0.5 * w * (1.0 + inflate), hh = 0.5 * h * (1.0 + inflate);
    return p.x >= x_c - hw && p.x <= x_c + hw && p.y >= y_c - hh && p.y <= y_c + hh;
  }

  friend bool operator==(const BBox&, const BBox&) = default;
};

struct DetectionFrame {
  TimestampMs t = 0;
  std::vector<BBox> boxes;

  const BBox* find(ObjectId id) const {
    for (const auto& b : boxes) {
      if (b.id == id) return &b;
    }
    return nullptr;
  }

  void validate() const {
    std::set<ObjectId> seen;
    for (const auto& b : boxes) {
      if (!(b.w > 0.0) || !(b.h > 0.0) || !std::isfinite(b.x_c) || !std::isfinite(b.y_c)) {
        throw Error(Errc::InvalidArgument, "box " + std::to_string(b.id) + " has invalid geometry");
      }
      if (!seen.insert(b.id).second) {
        throw Error(Errc::InvalidArgument, "duplicate box id " + std::to_string(b.id));
      }
    }
  }

  friend bool operator==(const DetectionFrame&, const DetectionFrame&) = default;
};

/// How the camera stream is laid out on screen: screen = scale * camera + offset.
struct ViewMapping {
  double scale_x = 1.0;
  double scale_y = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  ScreenPoint to_screen(PixelPoint p) const {
    return {scale_x * p.x + offset_x, scale_y * p.y + offset_y};
  }
  PixelPoint to_camera(ScreenPoint p) const {
    return {(p.x - offset_x) / scale_x, (p.y - offset_y) / scale_y};
  }
  BBox to_screen(const BBox& b) const {
    BBox s = b;
    const auto c = to_screen(b.center());
    s.x_c = c.x;
    s.y_c = c.y;
    s.w = b.w * std::abs(scale_x);
    s.h = b.h * std::abs(scale_y);
    return s;
  }
};

struct CursorState {
  ScreenPoint raw;
  ScreenPoint snapped;
  std::optional<ObjectId> target_id;
  bool snapped_flag = false;
  // False when the gaze is inside any box inflated by the hysteresis margin.
  bool clear_of_objects = true;
};

namespace detail {

// Candidate ordering for overlapping hits: nearest center, then smaller
// area, then smaller id.
inline std::optional<BBox> containing_box(ScreenPoint gaze, const DetectionFrame& frame,
                                          const ViewMapping& view) {
  std::optional<BBox> best;
  std::tuple<double, double, ObjectId> best_key{};
  for (const auto& cam_box : frame.boxes) {
    const BBox b = view.to_screen(cam_box);
    if (!b.contains(gaze)) continue;
    std::tuple<double, double, ObjectId> key{distance(gaze, b.center()), b.area(), b.id};
    if (!best || key < best_key) {
      best = b;
      best_key = key;
    }
  }
  return best;
}

inline bool clear_of_objects(ScreenPoint gaze, const DetectionFrame& frame, const ViewMapping& view,
                             double inflate) {
  return std::none_of(frame.boxes.begin(), frame.boxes.end(), [&](const BBox& b) {
    return view.to_screen(b).contains(gaze, inflate);
  });
}

}  // namespace detail

/// Magnetic snapping: a gaze point inside a box moves to the box center.
inline CursorState snap(ScreenPoint gaze, const DetectionFrame& frame, const ViewMapping& view = {}) {
  CursorState c;
  c.raw = gaze;
  c.snapped = gaze;
  if (auto hit = detail::containing_box(gaze, frame, view)) {
    c.snapped = hit->center();
    c.target_id = hit->id;
    c.snapped_flag = true;
  }
  c.clear_of_objects = !c.target_id.has_value();
  return c;
}

/// Snapping switched off: hit detection still runs but the cursor stays put.
inline CursorState snap_disabled(ScreenPoint gaze, const DetectionFrame& frame,
                                 const ViewMapping& view = {}) {
  CursorState c;
  c.raw = gaze;
  c.snapped = gaze;
  if (auto hit = detail::containing_box(gaze, frame, view)) {
    c.target_id = hit->id;
    c.snapped_flag = true;
  }
  c.clear_of_objects = !c.target_id.has_value();
  return c;
}

/// Snapping with hysteresis: once locked onto a box the cursor stays on it
/// until the gaze leaves the box inflated by `hysteresis_pct` percent.
class Snapper {
 public:
  explicit Snapper(bool enabled = true, double hysteresis_pct = 10.0)
      : enabled_(enabled), inflate_(hysteresis_pct / 100.0) {}

  bool enabled() const { return enabled_; }
  void set_enabled(bool on) {
    enabled_ = on;
    locked_.reset();
  }
  void reset() { locked_.reset(); }

  CursorState operator()(ScreenPoint gaze, const DetectionFrame& frame, const ViewMapping& view) {
    CursorState c;
    if (!enabled_) {
      locked_.reset();
      c = snap_disabled(gaze, frame, view);
    } else {
      const BBox* held = locked_ ? frame.find(*locked_) : nullptr;
      if (held && view.to_screen(*held).contains(gaze, inflate_)) {
        const BBox s = view.to_screen(*held);
        c.raw = gaze;
        c.snapped = s.center();
        c.target_id = s.id;
        c.snapped_flag = true;
      } else {
        c = snap(gaze, frame, view);
        locked_ = c.target_id;
      }
    }
    c.clear_of_objects = detail::clear_of_objects(gaze, frame, view, inflate_);
    return c;
  }

 private:
  bool enabled_;
  double inflate_;
  std::optional<ObjectId> locked_;
};

/// Replaces `current` with `incoming`, carrying ids over from boxes whose
/// centers moved less than half their smaller extent (greedy, nearest
/// first). Unmatched boxes keep their detector id unless it is already taken
/// in the output, in which case they draw from `next_id`.
inline DetectionFrame update_frame(const DetectionFrame& current, DetectionFrame incoming,
                                   ObjectId& next_id) {
  if (incoming.t < current.t) throw Error(Errc::StaleFrame, "incoming frame predates current frame");
  incoming.validate();

  struct Pair {
    double dist;
    std::size_t prev;
    std::size_t inc;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < current.boxes.size(); ++i) {
    const auto& p = current.boxes[i];
    const double gate = 0.5 * std::min(p.w, p.h);
    for (std::size_t j = 0; j < incoming.boxes.size(); ++j) {
      const double d = distance(p.center(), incoming.boxes[j].center());
      if (d <= gate) pairs.push_back({d, i, j});
    }
  }
  std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    return std::tie(a.dist, a.prev, a.inc) < std::tie(b.dist, b.prev, b.inc);
  });

  std::vector<std::optional<ObjectId>> assigned(incoming.boxes.size());
  std::vector<bool> prev_used(current.boxes.size(), false);
  std::set<ObjectId> taken;
  for (const auto& pr : pairs) {
    if (prev_used[pr.prev] || assigned[pr.inc]) continue;
    prev_used[pr.prev] = true;
    assigned[pr.inc] = current.boxes[pr.prev].id;
    taken.insert(current.boxes[pr.prev].id);
  }

  for (const auto& b : current.boxes) next_id = std::max(next_id, b.id + 1);
  for (const auto& b : incoming.boxes) next_id = std::max(next_id, b.id + 1);

  for (std::size_t j = 0; j < incoming.boxes.size(); ++j) {
    if (assigned[j]) continue;
    const ObjectId own = incoming.boxes[j].id;
    if (!taken.count(own)) {
      assigned[j] = own;
    } else {
      assigned[j] = next_id++;
    }
    taken.insert(*assigned[j]);
  }
  for (std::size_t j = 0; j < incoming.boxes.size(); ++j) incoming.boxes[j].id = *assigned[j];
  return incoming;
}

/// Current detection frame of one session plus its id counter.
class Workspace {
 public:
  const DetectionFrame& frame() const { return frame_; }

  void update(DetectionFrame incoming) { frame_ = update_frame(frame_, std::move(incoming), next_id_); }

  void clear() {
    frame_ = {};
    next_id_ = 0;
  }

 private:
  DetectionFrame frame_;
  ObjectId next_id_ = 0;
};

}  // namespace gazegrasp
