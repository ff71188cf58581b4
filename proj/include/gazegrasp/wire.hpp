#pragma once

// Line-framed wire protocol. One JSON object per line, tagged by "type".
// Field-by-field schema: docs/wire_protocol.md.

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazegrasp/error.hpp"
#include "gazegrasp/types.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp::wire {

// Inbound

struct GazeSample {
  std::string session;
  TimestampMs t = 0;
  double u = 0.0;
  double v = 0.0;
};

enum class Space { Camera, Screen };

// Inbound frames are in camera pixels; the session republishes frames in
// screen pixels for display.
struct Detections {
  std::string session;
  TimestampMs t = 0;
  Space space = Space::Camera;
  std::vector<BBox> boxes;
};

struct Control {
  std::string session;
  TimestampMs t = 0;
  std::string command;
  nlohmann::json args = nlohmann::json::object();
};

// Pacing tick: advances robot time and the heartbeat without a gaze sample.
struct Tick {
  std::string session;
  TimestampMs t = 0;
};

// Outbound

struct CursorUpdate {
  std::string session;
  TimestampMs t = 0;
  ScreenPoint raw;
  ScreenPoint snapped;
  std::optional<ObjectId> target_id;
  double dwell_progress = 0.0;
};

struct RobotEventMsg {
  std::string session;
  TimestampMs t = 0;
  std::string event;
  nlohmann::json payload = nlohmann::json::object();
};

struct State {
  std::string session;
  TimestampMs t = 0;
  std::string phase;
  std::optional<ObjectId> held;
  std::string robot;
  std::string gripper;
  std::array<double, 3> tcp{};
  bool snapping = true;
  bool calibrated = false;
  bool calibrating = false;
};

struct CalibTarget {
  std::string session;
  TimestampMs t = 0;
  int index = 0;
  int total = 0;
  ScreenPoint point;
};

struct CalibResult {
  std::string session;
  TimestampMs t = 0;
  bool ok = false;
  double residual_rms = 0.0;
  int points = 0;
  std::string reason;
};

struct ErrorMsg {
  std::string session;
  TimestampMs t = 0;
  std::string code;
  std::string message;
};

using Message = std::variant<GazeSample, Detections, Control, Tick, CursorUpdate, RobotEventMsg, State,
                             CalibTarget, CalibResult, ErrorMsg>;

inline const std::string& session_of(const Message& m) {
  return std::visit([](const auto& x) -> const std::string& { return x.session; }, m);
}
inline TimestampMs time_of(const Message& m) {
  return std::visit([](const auto& x) { return x.t; }, m);
}

inline bool is_inbound(const Message& m) {
  return std::holds_alternative<GazeSample>(m) || std::holds_alternative<Control>(m) ||
         std::holds_alternative<Tick>(m) ||
         (std::holds_alternative<Detections>(m) && std::get<Detections>(m).space == Space::Camera);
}

namespace detail {

using nlohmann::json;

inline json point(ScreenPoint p) { return json::array({p.x, p.y}); }

inline json optional_id(const std::optional<ObjectId>& id) { return id ? json(*id) : json(nullptr); }

inline json box_json(const BBox& b) {
  return {{"id", b.id}, {"label", b.label}, {"x", b.x_c}, {"y", b.y_c}, {"w", b.w}, {"h", b.h}};
}

inline json header(std::string_view type, const std::string& session, TimestampMs t) {
  return {{"type", type}, {"session", session}, {"t", t}};
}

inline json encode_one(const GazeSample& m) {
  json j = header("gaze", m.session, m.t);
  j["u"] = m.u;
  j["v"] = m.v;
  return j;
}
inline json encode_one(const Detections& m) {
  json j = header("detections", m.session, m.t);
  j["space"] = m.space == Space::Camera ? "camera" : "screen";
  j["boxes"] = json::array();
  for (const auto& b : m.boxes) j["boxes"].push_back(box_json(b));
  return j;
}
inline json encode_one(const Control& m) {
  json j = header("control", m.session, m.t);
  j["command"] = m.command;
  j["args"] = m.args.is_null() ? json::object() : m.args;
  return j;
}
inline json encode_one(const Tick& m) { return header("tick", m.session, m.t); }
inline json encode_one(const CursorUpdate& m) {
  json j = header("cursor", m.session, m.t);
  j["raw"] = point(m.raw);
  j["snapped"] = point(m.snapped);
  j["target_id"] = optional_id(m.target_id);
  j["dwell_progress"] = m.dwell_progress;
  return j;
}
inline json encode_one(const RobotEventMsg& m) {
  json j = header("robot_event", m.session, m.t);
  j["event"] = m.event;
  j["payload"] = m.payload;
  return j;
}
inline json encode_one(const State& m) {
  json j = header("state", m.session, m.t);
  j["phase"] = m.phase;
  j["held"] = optional_id(m.held);
  j["robot"] = m.robot;
  j["gripper"] = m.gripper;
  j["tcp"] = m.tcp;
  j["snapping"] = m.snapping;
  j["calibrated"] = m.calibrated;
  j["calibrating"] = m.calibrating;
  return j;
}
inline json encode_one(const CalibTarget& m) {
  json j = header("calib_target", m.session, m.t);
  j["index"] = m.index;
  j["total"] = m.total;
  j["point"] = point(m.point);
  return j;
}
inline json encode_one(const CalibResult& m) {
  json j = header("calib_result", m.session, m.t);
  j["ok"] = m.ok;
  j["residual_rms"] = m.residual_rms;
  j["points"] = m.points;
  j["reason"] = m.reason;
  return j;
}
inline json encode_one(const ErrorMsg& m) {
  json j = header("error", m.session, m.t);
  j["code"] = m.code;
  j["message"] = m.message;
  return j;
}

inline ScreenPoint read_point(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(Errc::ParseError, "point must be [x, y]");
  return {j[0].get<double>(), j[1].get<double>()};
}

inline std::optional<ObjectId> read_optional_id(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<ObjectId>();
}

inline double finite(const json& j, const char* field) {
  const double v = j.at(field).get<double>();
  if (!std::isfinite(v)) throw Error(Errc::ParseError, std::string(field) + " must be finite");
  return v;
}

inline BBox read_box(const json& j) {
  BBox b;
  b.id = j.at("id").get<ObjectId>();
  b.label = j.value("label", std::string{});
  b.x_c = finite(j, "x");
  b.y_c = finite(j, "y");
  b.w = finite(j, "w");
  b.h = finite(j, "h");
  return b;
}

}  // namespace detail

inline nlohmann::json to_json(const Message& m) {
  return std::visit([](const auto& x) { return detail::encode_one(x); }, m);
}

/// One line, no trailing newline. Keys are emitted in sorted order, so equal
/// messages always encode to equal bytes.
inline std::string encode(const Message& m) { return to_json(m).dump(); }

inline Message from_json(const nlohmann::json& j) {
  using nlohmann::json;
  if (!j.is_object()) throw Error(Errc::ParseError, "message must be a JSON object");
  try {
    const auto type = j.at("type").get<std::string>();
    const auto session = j.at("session").get<std::string>();
    if (session.empty()) throw Error(Errc::ParseError, "session must be non-empty");
    const auto& tj = j.at("t");
    if (!tj.is_number_integer()) throw Error(Errc::ParseError, "t must be an integer (ms)");
    const auto t = tj.get<TimestampMs>();

    if (type == "gaze") return GazeSample{session, t, detail::finite(j, "u"), detail::finite(j, "v")};
    if (type == "detections") {
      Detections d{session, t, Space::Camera, {}};
      const auto space = j.value("space", std::string("camera"));
      if (space == "screen") {
        d.space = Space::Screen;
      } else if (space != "camera") {
        throw Error(Errc::ParseError, "space must be camera or screen");
      }
      for (const auto& b : j.at("boxes")) d.boxes.push_back(detail::read_box(b));
      return d;
    }
    if (type == "control") {
      Control c{session, t, j.at("command").get<std::string>(), j.value("args", json::object())};
      if (!c.args.is_object()) throw Error(Errc::ParseError, "args must be an object");
      return c;
    }
    if (type == "tick") return Tick{session, t};
    if (type == "cursor") {
      return CursorUpdate{session, t, detail::read_point(j.at("raw")), detail::read_point(j.at("snapped")),
                          detail::read_optional_id(j.at("target_id")), j.at("dwell_progress").get<double>()};
    }
    if (type == "robot_event") {
      return RobotEventMsg{session, t, j.at("event").get<std::string>(), j.value("payload", json::object())};
    }
    if (type == "state") {
      State s;
      s.session = session;
      s.t = t;
      s.phase = j.at("phase").get<std::string>();
      s.held = detail::read_optional_id(j.at("held"));
      s.robot = j.value("robot", std::string{});
      s.gripper = j.value("gripper", std::string{});
      if (j.contains("tcp")) s.tcp = j.at("tcp").get<std::array<double, 3>>();
      s.snapping = j.value("snapping", true);
      s.calibrated = j.value("calibrated", false);
      s.calibrating = j.value("calibrating", false);
      return s;
    }
    if (type == "calib_target") {
      return CalibTarget{session, t, j.at("index").get<int>(), j.at("total").get<int>(),
                         detail::read_point(j.at("point"))};
    }
    if (type == "calib_result") {
      return CalibResult{session, t, j.at("ok").get<bool>(), j.value("residual_rms", 0.0), j.value("points", 0),
                         j.value("reason", std::string{})};
    }
    if (type == "error") {
      return ErrorMsg{session, t, j.at("code").get<std::string>(), j.value("message", std::string{})};
    }
    throw Error(Errc::ParseError, "unknown message type '" + type + "'");
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

inline Message decode(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) throw Error(Errc::ParseError, "line is not valid JSON");
  return from_json(j);
}

}  // namespace gazegrasp::wire
