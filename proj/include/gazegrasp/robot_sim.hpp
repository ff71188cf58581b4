#pragma once

// Kinematics-free pick/place executor. The tool center point moves along
// straight segments at constant speed; gripper actuation takes a fixed time.
//
// Pick:  above target -> descend -> close -> ascend -> home -> PickDone
// Place: above target -> descend -> open  -> ascend -> home -> PlaceDone

#include <cmath>
#include <cstdint>
#include <deque>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazegrasp/error.hpp"
#include "gazegrasp/geometry.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp {

enum class Gripper { Open, Closed };
enum class RobotStatus { Idle, Moving, Grasping, Releasing };

enum class RobotEventKind {
  MoveStarted,
  ArrivedAbove,
  Descended,
  GripperClosed,
  GripperOpened,
  GraspFailed,
  ReleaseFailed,
  Ascended,
  ArrivedHome,
  PickDone,
  PlaceDone,
  Failed,
};

inline std::string_view to_string(RobotEventKind k) {
  switch (k) {
    case RobotEventKind::MoveStarted: return "MoveStarted";
    case RobotEventKind::ArrivedAbove: return "ArrivedAbove";
    case RobotEventKind::Descended: return "Descended";
    case RobotEventKind::GripperClosed: return "GripperClosed";
    case RobotEventKind::GripperOpened: return "GripperOpened";
    case RobotEventKind::GraspFailed: return "GraspFailed";
    case RobotEventKind::ReleaseFailed: return "ReleaseFailed";
    case RobotEventKind::Ascended: return "Ascended";
    case RobotEventKind::ArrivedHome: return "ArrivedHome";
    case RobotEventKind::PickDone: return "PickDone";
    case RobotEventKind::PlaceDone: return "PlaceDone";
    case RobotEventKind::Failed: return "Failed";
  }
  return "?";
}

inline std::string_view to_string(RobotStatus s) {
  switch (s) {
    case RobotStatus::Idle: return "Idle";
    case RobotStatus::Moving: return "Moving";
    case RobotStatus::Grasping: return "Grasping";
    case RobotStatus::Releasing: return "Releasing";
  }
  return "?";
}

struct RobotEvent {
  RobotEventKind kind = RobotEventKind::MoveStarted;
  double t_ms = 0.0;  // simulated clock
  WorkspacePoint tcp;
  std::optional<ObjectId> object;
};

struct SimObject {
  ObjectId id = 0;
  std::string label;
  WorkspacePoint pose;
  double bbox_w_px = 40.0;
  double bbox_h_px = 40.0;
  bool attached = false;
};

struct Scene {
  std::vector<SimObject> objects;
  WorkspacePoint home{0.0, 0.0, 0.4};

  SimObject* find(ObjectId id) {
    for (auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }
  const SimObject* find(ObjectId id) const {
    for (const auto& o : objects)
      if (o.id == id) return &o;
    return nullptr;
  }
};

struct SimParams {
  double speed_mps = 0.25;
  double clearance_m = 0.02;
  double gripper_ms = 300.0;
  double fail_rate = 0.0;
  std::uint64_t seed = 1;
  WorkspaceBounds bounds;
};

struct MotionSegment {
  enum class Kind { Move, Grip, Release, Marker };
  Kind kind = Kind::Move;
  WorkspacePoint from;
  WorkspacePoint to;
  double duration_s = 0.0;
  double elapsed_s = 0.0;
  RobotEventKind on_complete = RobotEventKind::ArrivedAbove;
};

struct SimRobot {
  WorkspacePoint tcp;
  WorkspacePoint home;
  Gripper gripper = Gripper::Open;
  std::optional<ObjectId> held;
  SimParams params;
  double clock_ms = 0.0;
  std::deque<MotionSegment> plan;
  std::mt19937_64 rng;
  // Set when the current plan hits an injected failure; the closing marker
  // then reports Failed instead of PickDone/PlaceDone.
  bool plan_failed = false;
  // Object the current pick cycle will grasp.
  std::optional<ObjectId> plan_object;

  SimRobot() : SimRobot(WorkspacePoint{}, SimParams{}) {}
  SimRobot(WorkspacePoint home_pose, SimParams p)
      : tcp(home_pose), home(home_pose), params(p), rng(p.seed) {}

  RobotStatus status() const {
    if (plan.empty()) return RobotStatus::Idle;
    switch (plan.front().kind) {
      case MotionSegment::Kind::Grip: return RobotStatus::Grasping;
      case MotionSegment::Kind::Release: return RobotStatus::Releasing;
      default: return RobotStatus::Moving;
    }
  }
  /// Commanded destination of the current segment, if moving.
  std::optional<WorkspacePoint> moving_target() const {
    if (plan.empty() || plan.front().kind != MotionSegment::Kind::Move) return std::nullopt;
    return plan.front().to;
  }
};

namespace detail {

inline MotionSegment move_segment(const WorkspacePoint& from, const WorkspacePoint& to, double speed,
                                  RobotEventKind done) {
  return {MotionSegment::Kind::Move, from, to, distance(from, to) / speed, 0.0, done};
}

inline void plan_cycle(SimRobot& robot, const WorkspacePoint& target, bool pick) {
  const auto& p = robot.params;
  const WorkspacePoint above{target.X, target.Y, target.Z + p.clearance_m};
  robot.plan.clear();
  robot.plan_failed = false;
  robot.plan.push_back(move_segment(robot.tcp, above, p.speed_mps, RobotEventKind::ArrivedAbove));
  robot.plan.push_back(move_segment(above, target, p.speed_mps, RobotEventKind::Descended));
  robot.plan.push_back({pick ? MotionSegment::Kind::Grip : MotionSegment::Kind::Release, target, target,
                        p.gripper_ms / 1000.0, 0.0,
                        pick ? RobotEventKind::GripperClosed : RobotEventKind::GripperOpened});
  robot.plan.push_back(move_segment(target, above, p.speed_mps, RobotEventKind::Ascended));
  robot.plan.push_back(move_segment(above, robot.home, p.speed_mps, RobotEventKind::ArrivedHome));
  robot.plan.push_back({MotionSegment::Kind::Marker, robot.home, robot.home, 0.0, 0.0,
                        pick ? RobotEventKind::PickDone : RobotEventKind::PlaceDone});
}

inline bool inject_failure(SimRobot& robot) {
  if (robot.params.fail_rate <= 0.0) return false;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return u(robot.rng) < robot.params.fail_rate;
}

}  // namespace detail

/// Starts a pick cycle. Returns the MoveStarted event; the rest of the
/// timeline is produced by sim_tick.
inline std::vector<RobotEvent> execute_pick(SimRobot& robot, const Scene& scene, const WorkspacePoint& target,
                                            ObjectId obj) {
  if (robot.status() != RobotStatus::Idle || robot.held) {
    throw Error(Errc::RobotBusy, "robot is executing or already holding an object");
  }
  if (!workspace_bounds_check(target, robot.params.bounds)) {
    throw Error(Errc::TargetOutOfBounds, "pick target outside workspace bounds");
  }
  if (!scene.find(obj)) throw Error(Errc::ObjectMissing, "object " + std::to_string(obj) + " not in scene");
  detail::plan_cycle(robot, target, true);
  robot.plan_object = obj;
  return {RobotEvent{RobotEventKind::MoveStarted, robot.clock_ms, robot.tcp, obj}};
}

inline std::vector<RobotEvent> execute_place(SimRobot& robot, const WorkspacePoint& target) {
  if (robot.status() != RobotStatus::Idle) throw Error(Errc::RobotBusy, "robot is executing");
  if (!robot.held) throw Error(Errc::NothingHeld, "place requested with an empty gripper");
  if (!workspace_bounds_check(target, robot.params.bounds)) {
    throw Error(Errc::TargetOutOfBounds, "place target outside workspace bounds");
  }
  detail::plan_cycle(robot, target, false);
  robot.plan_object = robot.held;
  return {RobotEvent{RobotEventKind::MoveStarted, robot.clock_ms, robot.tcp, robot.held}};
}

/// Advances the simulated clock by dt_ms, completing as many segments as
/// fit. Leftover time carries into the next segment.
inline std::vector<RobotEvent> sim_tick(SimRobot& robot, Scene& scene, double dt_ms) {
  if (!(dt_ms > 0.0)) throw Error(Errc::InvalidArgument, "sim_tick needs dt > 0");
  std::vector<RobotEvent> events;
  double budget_s = dt_ms / 1000.0;
  double used_s = 0.0;
  const double start_ms = robot.clock_ms;

  auto sync_attached = [&] {
    if (!robot.held) return;
    if (auto* o = scene.find(*robot.held)) o->pose = robot.tcp;
  };

  while (!robot.plan.empty()) {
    auto& seg = robot.plan.front();
    const double remaining = seg.duration_s - seg.elapsed_s;
    if (remaining > budget_s) {
      seg.elapsed_s += budget_s;
      used_s += budget_s;
      budget_s = 0.0;
      if (seg.kind == MotionSegment::Kind::Move) {
        const double f = seg.elapsed_s / seg.duration_s;
        robot.tcp = {seg.from.X + f * (seg.to.X - seg.from.X), seg.from.Y + f * (seg.to.Y - seg.from.Y),
                     seg.from.Z + f * (seg.to.Z - seg.from.Z)};
      }
      break;
    }
    budget_s -= remaining;
    used_s += remaining;
    robot.tcp = seg.to;
    RobotEvent ev{seg.on_complete, start_ms + used_s * 1000.0, robot.tcp, robot.plan_object};

    switch (seg.kind) {
      case MotionSegment::Kind::Grip:
        if (detail::inject_failure(robot)) {
          robot.plan_failed = true;
          ev.kind = RobotEventKind::GraspFailed;
        } else if (auto* o = robot.plan_object ? scene.find(*robot.plan_object) : nullptr) {
          robot.gripper = Gripper::Closed;
          robot.held = o->id;
          o->attached = true;
        } else {
          robot.plan_failed = true;
          ev.kind = RobotEventKind::GraspFailed;
        }
        break;
      case MotionSegment::Kind::Release:
        if (detail::inject_failure(robot)) {
          robot.plan_failed = true;
          ev.kind = RobotEventKind::ReleaseFailed;
        } else {
          if (auto* o = scene.find(*robot.held)) {
            o->attached = false;
            o->pose = seg.to;
          }
          robot.held.reset();
          robot.gripper = Gripper::Open;
        }
        break;
      case MotionSegment::Kind::Marker:
        if (robot.plan_failed) ev.kind = RobotEventKind::Failed;
        break;
      case MotionSegment::Kind::Move:
        break;
    }
    robot.plan.pop_front();
    sync_attached();
    events.push_back(ev);
    if (robot.plan.empty()) {
      robot.plan_object.reset();
      robot.plan_failed = false;
    }
  }
  sync_attached();
  robot.clock_ms = start_ms + dt_ms;
  return events;
}

/// Ticks until the plan drains or `max_ms` of simulated time passes.
inline std::vector<RobotEvent> run_to_completion(SimRobot& robot, Scene& scene, double dt_ms = 10.0,
                                                 double max_ms = 600'000.0) {
  std::vector<RobotEvent> all;
  double spent = 0.0;
  while (robot.status() != RobotStatus::Idle && spent < max_ms) {
    auto ev = sim_tick(robot, scene, dt_ms);
    all.insert(all.end(), ev.begin(), ev.end());
    spent += dt_ms;
  }
  return all;
}

/// What a detector looking at the table would report: every object not in
/// the gripper, placed at the pixel the homography assigns to its pose.
inline DetectionFrame detection_frame_from_scene(const Scene& scene, const Homography& h, TimestampMs t) {
  DetectionFrame f;
  f.t = t;
  for (const auto& o : scene.objects) {
    if (o.attached) continue;
    const auto px = workspace_to_pixel(h, o.pose);
    f.boxes.push_back({o.id, o.label, px.x, px.y, o.bbox_w_px, o.bbox_h_px});
  }
  return f;
}

// Scene file: JSON {"home": [X,Y,Z], "objects": [{"id", "label", "pose": [X,Y,Z], "bbox_px": [w,h]}]}.

inline Scene scene_from_json(const nlohmann::json& j) {
  try {
    Scene s;
    if (j.contains("home")) {
      const auto h = j.at("home").get<std::vector<double>>();
      if (h.size() != 3) throw Error(Errc::ParseError, "home needs 3 numbers");
      s.home = {h[0], h[1], h[2]};
    }
    for (const auto& o : j.at("objects")) {
      SimObject obj;
      obj.id = o.at("id").get<ObjectId>();
      obj.label = o.at("label").get<std::string>();
      const auto pose = o.at("pose").get<std::vector<double>>();
      if (pose.size() != 3) throw Error(Errc::ParseError, "pose needs 3 numbers");
      obj.pose = {pose[0], pose[1], pose[2]};
      const auto ext = o.at("bbox_px").get<std::vector<double>>();
      if (ext.size() != 2 || !(ext[0] > 0.0) || !(ext[1] > 0.0)) {
        throw Error(Errc::ParseError, "bbox_px needs two positive numbers");
      }
      obj.bbox_w_px = ext[0];
      obj.bbox_h_px = ext[1];
      if (s.find(obj.id)) throw Error(Errc::ParseError, "duplicate object id " + std::to_string(obj.id));
      s.objects.push_back(obj);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
}

inline nlohmann::json to_json(const Scene& s) {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : s.objects) {
    objs.push_back({{"id", o.id},
                    {"label", o.label},
                    {"pose", {o.pose.X, o.pose.Y, o.pose.Z}},
                    {"bbox_px", {o.bbox_w_px, o.bbox_h_px}}});
  }
  return {{"home", {s.home.X, s.home.Y, s.home.Z}}, {"objects", objs}};
}

inline Scene load_scene(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, e.what());
  }
  return scene_from_json(j);
}

}  // namespace gazegrasp
