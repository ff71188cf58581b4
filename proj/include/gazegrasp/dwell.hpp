#pragma once

// Dwell-time pick/place protocol.
//
//   Idle --gaze on object--> HoverObject --dwell--> ExecutingPick --PickDone--> Holding
//   Holding --gaze on empty spot--> HoverEmpty --dwell--> ExecutingPlace --PlaceDone--> Idle
//
// The machine is driven purely by caller timestamps.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <type_traits>
#include <variant>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp {

/// Screen-space rectangle, closed.
struct ScreenRect {
  double x0 = 0.0;
  double y0 = 0.0;
  double x1 = 0.0;
  double y1 = 0.0;

  bool contains(ScreenPoint p) const { return p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1; }
};

struct DwellParams {
  TimestampMs dwell_ms = 3000;
  TimestampMs grace_ms = 150;
  double drift_px = 40.0;
  ScreenRect workspace_rect{0.0, 0.0, 1920.0, 1080.0};  // where empty-spot placing is allowed
};

namespace phase {
struct Idle {};
struct HoverObject {
  ObjectId id = 0;
  TimestampMs since = 0;
  TimestampMs last_seen = 0;
  double progress = 0.0;
};
struct ExecutingPick {
  ObjectId id = 0;
};
struct Holding {};
struct HoverEmpty {
  ScreenPoint anchor;
  TimestampMs since = 0;
  TimestampMs last_valid = 0;
  double progress = 0.0;
};
struct ExecutingPlace {
  ScreenPoint anchor;
};
}  // namespace phase

using Phase = std::variant<phase::Idle, phase::HoverObject, phase::ExecutingPick, phase::Holding,
                           phase::HoverEmpty, phase::ExecutingPlace>;

inline std::string_view phase_name(const Phase& p) {
  constexpr std::string_view names[] = {"Idle",    "HoverObject", "ExecutingPick",
                                        "Holding", "HoverEmpty",  "ExecutingPlace"};
  return names[p.index()];
}

struct InteractionState {
  Phase phase = phase::Idle{};
  DwellParams params;
  // Number of hovers abandoned before their dwell completed.
  int resets = 0;

  double progress() const {
    if (auto* h = std::get_if<phase::HoverObject>(&phase)) return h->progress;
    if (auto* e = std::get_if<phase::HoverEmpty>(&phase)) return e->progress;
    return 0.0;
  }
  bool holding() const {
    return std::holds_alternative<phase::Holding>(phase) ||
           std::holds_alternative<phase::HoverEmpty>(phase) ||
           std::holds_alternative<phase::ExecutingPlace>(phase);
  }
  bool executing() const {
    return std::holds_alternative<phase::ExecutingPick>(phase) ||
           std::holds_alternative<phase::ExecutingPlace>(phase);
  }
};

enum class RequestKind { Pick, Place };

inline std::string_view to_string(RequestKind k) { return k == RequestKind::Pick ? "pick" : "place"; }

struct RobotRequest {
  RequestKind kind = RequestKind::Pick;
  std::optional<ObjectId> object_id;  // set for Pick
  ScreenPoint screen;                 // cursor location that triggered the request
  TimestampMs issued_at = 0;
};

struct DwellResult {
  InteractionState state;
  std::optional<RobotRequest> request;
};

namespace detail {

inline double dwell_progress(TimestampMs now, TimestampMs since, TimestampMs dwell_ms) {
  if (dwell_ms <= 0) return 1.0;
  const auto elapsed = std::clamp<TimestampMs>(now - since, 0, dwell_ms);
  return static_cast<double>(elapsed) / static_cast<double>(dwell_ms);
}

}  // namespace detail

inline DwellResult dwell_tick(const InteractionState& state, const CursorState& cursor, TimestampMs t) {
  DwellResult out{state, std::nullopt};
  const auto& prm = state.params;
  auto& st = out.state;

  std::visit(
      [&](const auto& ph) {
        using P = std::decay_t<decltype(ph)>;
        if constexpr (std::is_same_v<P, phase::Idle>) {
          if (cursor.target_id) {
            st.phase = phase::HoverObject{*cursor.target_id, t, t, 0.0};
          }
        } else if constexpr (std::is_same_v<P, phase::HoverObject>) {
          phase::HoverObject h = ph;
          if (cursor.target_id && *cursor.target_id == h.id) {
            h.last_seen = t;
          } else if (cursor.target_id) {
            ++st.resets;
            h = phase::HoverObject{*cursor.target_id, t, t, 0.0};
          } else if (t - h.last_seen > prm.grace_ms) {
            ++st.resets;
            st.phase = phase::Idle{};
            return;
          }
          h.progress = detail::dwell_progress(t, h.since, prm.dwell_ms);
          if (cursor.target_id && *cursor.target_id == h.id && t - h.since >= prm.dwell_ms) {
            out.request = RobotRequest{RequestKind::Pick, h.id, cursor.snapped, t};
            st.phase = phase::ExecutingPick{h.id};
            return;
          }
          st.phase = h;
        } else if constexpr (std::is_same_v<P, phase::Holding>) {
          if (cursor.clear_of_objects && !cursor.target_id && prm.workspace_rect.contains(cursor.snapped)) {
            st.phase = phase::HoverEmpty{cursor.snapped, t, t, 0.0};
          }
        } else if constexpr (std::is_same_v<P, phase::HoverEmpty>) {
          phase::HoverEmpty e = ph;
          const bool valid = cursor.clear_of_objects && !cursor.target_id &&
                             prm.workspace_rect.contains(cursor.snapped);
          if (valid) {
            e.last_valid = t;
            if (distance(cursor.snapped, e.anchor) > prm.drift_px) {
              ++st.resets;
              e.anchor = cursor.snapped;
              e.since = t;
            }
          } else if (t - e.last_valid > prm.grace_ms) {
            ++st.resets;
            st.phase = phase::Holding{};
            return;
          }
          e.progress = detail::dwell_progress(t, e.since, prm.dwell_ms);
          if (valid && t - e.since >= prm.dwell_ms) {
            out.request = RobotRequest{RequestKind::Place, std::nullopt, e.anchor, t};
            st.phase = phase::ExecutingPlace{e.anchor};
            return;
          }
          st.phase = e;
        } else {
          // Executing phases ignore gaze until the robot reports back.
        }
      },
      state.phase);
  return out;
}

enum class RobotOutcome { PickDone, PlaceDone, Failed };

inline std::string_view to_string(RobotOutcome o) {
  switch (o) {
    case RobotOutcome::PickDone: return "PickDone";
    case RobotOutcome::PlaceDone: return "PlaceDone";
    case RobotOutcome::Failed: return "Failed";
  }
  return "?";
}

inline InteractionState on_robot_done(const InteractionState& state, RobotOutcome outcome) {
  InteractionState out = state;
  if (std::holds_alternative<phase::ExecutingPick>(state.phase)) {
    if (outcome == RobotOutcome::PickDone) {
      out.phase = phase::Holding{};
    } else if (outcome == RobotOutcome::Failed) {
      out.phase = phase::Idle{};
    } else {
      throw Error(Errc::UnexpectedCompletion, "PlaceDone while executing a pick");
    }
    return out;
  }
  if (std::holds_alternative<phase::ExecutingPlace>(state.phase)) {
    if (outcome == RobotOutcome::PlaceDone) {
      out.phase = phase::Idle{};
    } else if (outcome == RobotOutcome::Failed) {
      out.phase = phase::Holding{};
    } else {
      throw Error(Errc::UnexpectedCompletion, "PickDone while executing a place");
    }
    return out;
  }
  throw Error(Errc::UnexpectedCompletion,
              "robot completion in phase " + std::string(phase_name(state.phase)));
}

}  // namespace gazegrasp
