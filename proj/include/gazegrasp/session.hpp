#pragma once

// Per-session orchestrator: gaze -> calibration map -> filter -> snapping ->
// dwell -> geometry -> simulated robot. Output is a pure function of the
// inbound message sequence; every timestamp comes from the messages.

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "gazegrasp/calib.hpp"
#include "gazegrasp/config.hpp"
#include "gazegrasp/dwell.hpp"
#include "gazegrasp/error.hpp"
#include "gazegrasp/filter.hpp"
#include "gazegrasp/geometry.hpp"
#include "gazegrasp/robot_sim.hpp"
#include "gazegrasp/wire.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp {

/// Everything a session starts from. Files named in the config are read once
/// by `setup_from_config` so that sessions never touch the filesystem on
/// their own except to persist a calibration.
struct SessionSetup {
  Config config;
  std::optional<CalibrationModel> model;
  std::optional<Homography> homography;
  std::optional<Scene> scene;
};

inline SessionSetup setup_from_config(const Config& cfg) {
  SessionSetup s;
  s.config = cfg;
  if (!cfg.calib_model_path.empty() && std::ifstream(cfg.calib_model_path).good()) {
    s.model = load_calibration(cfg.calib_model_path);
  }
  if (!cfg.geometry_path.empty()) s.homography = load_geometry(cfg.geometry_path).homography;
  if (!cfg.scene_path.empty()) s.scene = load_scene(cfg.scene_path);
  return s;
}

inline std::string_view to_string(Gripper g) { return g == Gripper::Open ? "open" : "closed"; }

class Session {
 public:
  Session(std::string id, SessionSetup setup)
      : id_(std::move(id)),
        setup_(std::move(setup)),
        cfg_(setup_.config),
        model_(setup_.model),
        homography_(setup_.homography),
        snapper_(cfg_.snap_enabled, cfg_.snap_hysteresis_pct) {
    reset_pipeline();
  }

  const std::string& id() const { return id_; }
  const InteractionState& interaction() const { return dwell_; }
  const SimRobot& robot() const { return robot_; }
  const Scene& scene() const { return scene_; }
  const DetectionFrame& frame() const { return workspace_.frame(); }
  const std::optional<CalibrationModel>& model() const { return model_; }
  bool calibrating() const { return calib_.has_value(); }
  bool snapping() const { return snapper_.enabled(); }

  void enqueue(wire::Message m) { queue_.push_back(std::move(m)); }
  std::size_t queued() const { return queue_.size(); }

  /// Processes queued messages stamped at or before `now` in timestamp order
  /// (ties keep arrival order), then advances the robot to `now` and emits a
  /// State heartbeat if one is due.
  std::vector<wire::Message> tick(TimestampMs now) {
    out_.clear();
    std::stable_sort(queue_.begin(), queue_.end(),
                     [](const wire::Message& a, const wire::Message& b) { return wire::time_of(a) < wire::time_of(b); });
    while (!queue_.empty() && wire::time_of(queue_.front()) <= now) {
      wire::Message m = std::move(queue_.front());
      queue_.pop_front();
      handle(m);
    }
    advance_robot(now);
    publish_state(now, false);
    return std::move(out_);
  }

  /// Enqueue followed by tick at the message's own timestamp.
  std::vector<wire::Message> process(wire::Message m) {
    const TimestampMs t = wire::time_of(m);
    enqueue(std::move(m));
    return tick(t);
  }

 private:
  void emit(wire::Message m) { out_.push_back(std::move(m)); }

  void emit_error(TimestampMs t, Errc code, const std::string& what) {
    emit(wire::ErrorMsg{id_, t, std::string(to_string(code)), what});
  }

  void reset_pipeline() {
    filter_.reset();
    last_gaze_t_.reset();
    dwell_ = InteractionState{};
    dwell_.params = cfg_.dwell;
    snapper_.reset();
    scene_ = setup_.scene.value_or(Scene{});
    robot_ = SimRobot(scene_.home, cfg_.sim);
    robot_epoch_.reset();
    workspace_.clear();
    last_cursor_t_.reset();
    last_state_.clear();
    last_state_t_.reset();
    last_not_calibrated_t_.reset();
  }

  // Messages

  void handle(const wire::Message& m) {
    std::visit(
        [&](const auto& x) {
          using T = std::decay_t<decltype(x)>;
          if constexpr (std::is_same_v<T, wire::GazeSample>) {
            on_gaze(x);
          } else if constexpr (std::is_same_v<T, wire::Detections>) {
            on_detections(x);
          } else if constexpr (std::is_same_v<T, wire::Control>) {
            on_control(x);
          } else if constexpr (std::is_same_v<T, wire::Tick>) {
            advance_robot(x.t);
          } else {
            emit_error(x.t, Errc::InvalidArgument, "outbound message type sent to the session");
          }
        },
        m);
  }

  void on_gaze(const wire::GazeSample& g) {
    const IrisPoint iris{g.u, g.v};
    if (calib_) {
      calib_->averager.add(g.t, iris);
      return;
    }
    if (!model_) {
      if (!last_not_calibrated_t_ || g.t - *last_not_calibrated_t_ >= cfg_.heartbeat_ms) {
        emit_error(g.t, Errc::NotCalibrated, "gaze received before a calibration model was loaded or fit");
        last_not_calibrated_t_ = g.t;
      }
      return;
    }
    if (last_gaze_t_ && g.t < *last_gaze_t_) {
      emit_error(g.t, Errc::NonMonotonicTime, "gaze sample older than the previous one; dropped");
      return;
    }
    last_gaze_t_ = g.t;

    ScreenPoint z = map_gaze(*model_, iris);
    z.x = std::clamp(z.x, 0.0, cfg_.screen_w);
    z.y = std::clamp(z.y, 0.0, cfg_.screen_h);

    ScreenPoint smoothed;
    if (!filter_) {
      filter_ = filter_init(z, g.t, cfg_.filter);
      smoothed = z;
    } else {
      auto step = filter_step(*filter_, z, g.t);
      filter_ = step.state;
      smoothed = step.smoothed;
    }

    advance_robot(g.t);

    const CursorState cursor = snapper_(smoothed, workspace_.frame(), cfg_.view);
    auto res = dwell_tick(dwell_, cursor, g.t);
    dwell_ = res.state;
    if (res.request) dispatch(*res.request, g.t);

    const double min_gap = cfg_.pipeline_hz > 0.0 ? 1000.0 / cfg_.pipeline_hz : 0.0;
    if (!last_cursor_t_ || static_cast<double>(g.t - *last_cursor_t_) >= min_gap - 1e-9 || res.request) {
      emit(wire::CursorUpdate{id_, g.t, cursor.raw, cursor.snapped, cursor.target_id, dwell_.progress()});
      last_cursor_t_ = g.t;
    }
    publish_state(g.t, false);
  }

  void on_detections(const wire::Detections& d) {
    if (d.space != wire::Space::Camera) {
      emit_error(d.t, Errc::InvalidArgument, "inbound detections must be in camera pixels");
      return;
    }
    DetectionFrame f{d.t, d.boxes};
    try {
      workspace_.update(std::move(f));
    } catch (const Error& e) {
      emit_error(d.t, e.code(), e.what());
      return;
    }
    publish_frame(d.t);
  }

  void on_control(const wire::Control& c) {
    const auto& cmd = c.command;
    try {
      if (cmd == "start_calibration") {
        start_calibration(c);
      } else if (cmd == "calib_point_ack") {
        ack_calibration_point(c.t);
      } else if (cmd == "abort_calibration") {
        abort_calibration(c.t);
      } else if (cmd == "set_snapping") {
        snapper_.set_enabled(c.args.at("enabled").get<bool>());
      } else if (cmd == "load_scene") {
        setup_.scene = c.args.contains("scene") ? scene_from_json(c.args.at("scene"))
                                                : load_scene(c.args.at("path").get<std::string>());
        restart_robot(c.t);
      } else if (cmd == "load_calibration") {
        model_ = c.args.contains("model") ? calibration_from_json(c.args.at("model"))
                                          : load_calibration(c.args.at("path").get<std::string>());
        filter_.reset();
        last_gaze_t_.reset();
      } else if (cmd == "load_geometry") {
        homography_ = (c.args.contains("geometry") ? geometry_from_json(c.args.at("geometry"))
                                                   : load_geometry(c.args.at("path").get<std::string>()))
                          .homography;
        restart_robot(c.t);
      } else if (cmd == "reset") {
        calib_.reset();
        restart_robot(c.t);
      } else if (cmd == "attach") {
        // Subscription only; handled by the transport.
      } else {
        emit_error(c.t, Errc::InvalidArgument, "unknown command '" + cmd + "'");
        return;
      }
    } catch (const Error& e) {
      emit_error(c.t, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      emit_error(c.t, Errc::ParseError, std::string("bad args for '") + cmd + "': " + e.what());
    }
    publish_state(c.t, false);
  }

  void restart_robot(TimestampMs t) {
    reset_pipeline();
    robot_epoch_ = t;
    publish_frame_from_scene(t);
  }

  // Robot

  void advance_robot(TimestampMs t) {
    if (!robot_epoch_) {
      robot_epoch_ = t;
      publish_frame_from_scene(t);
      return;
    }
    const double target_ms = static_cast<double>(t - *robot_epoch_);
    const double dt = target_ms - robot_.clock_ms;
    if (dt <= 0.0) return;
    for (const auto& ev : sim_tick(robot_, scene_, dt)) on_robot_event(ev);
  }

  TimestampMs session_time(double sim_ms) const {
    return *robot_epoch_ + static_cast<TimestampMs>(std::llround(sim_ms));
  }

  static nlohmann::json point_json(const WorkspacePoint& p) { return nlohmann::json::array({p.X, p.Y, p.Z}); }

  void on_robot_event(const RobotEvent& ev) {
    const TimestampMs t = session_time(ev.t_ms);
    nlohmann::json payload{{"tcp", point_json(ev.tcp)}, {"object", ev.object ? nlohmann::json(*ev.object) : nlohmann::json(nullptr)}};
    emit(wire::RobotEventMsg{id_, t, std::string(to_string(ev.kind)), payload});
    switch (ev.kind) {
      case RobotEventKind::GripperClosed:
      case RobotEventKind::GripperOpened: publish_frame_from_scene(t); break;
      case RobotEventKind::PickDone: complete(RobotOutcome::PickDone, t); break;
      case RobotEventKind::PlaceDone: complete(RobotOutcome::PlaceDone, t); break;
      case RobotEventKind::Failed: complete(RobotOutcome::Failed, t); break;
      default: break;
    }
  }

  void complete(RobotOutcome outcome, TimestampMs t) {
    try {
      dwell_ = on_robot_done(dwell_, outcome);
    } catch (const Error& e) {
      emit_error(t, e.code(), e.what());
    }
    publish_state(t, false);
  }

  void dispatch(const RobotRequest& req, TimestampMs t) {
    nlohmann::json payload{{"kind", to_string(req.kind)}, {"screen", {req.screen.x, req.screen.y}}};
    try {
      if (!homography_) throw Error(Errc::NotCalibrated, "no camera-to-workspace homography loaded");
      std::vector<RobotEvent> started;
      if (req.kind == RequestKind::Pick) {
        const BBox* box = workspace_.frame().find(*req.object_id);
        if (!box) throw Error(Errc::ObjectMissing, "target box vanished before dispatch");
        const PixelPoint px = box->center();
        const WorkspacePoint target = pixel_to_workspace(*homography_, px);
        payload["object"] = box->id;
        payload["label"] = box->label;
        payload["pixel"] = {px.x, px.y};
        payload["target"] = point_json(target);
        started = execute_pick(robot_, scene_, target, box->id);
      } else {
        const PixelPoint px = cfg_.view.to_camera(req.screen);
        const WorkspacePoint target = pixel_to_workspace(*homography_, px);
        payload["object"] = robot_.held ? nlohmann::json(*robot_.held) : nlohmann::json(nullptr);
        payload["pixel"] = {px.x, px.y};
        payload["target"] = point_json(target);
        started = execute_place(robot_, target);
      }
      emit(wire::RobotEventMsg{id_, t, "dispatch", payload});
      for (const auto& ev : started) on_robot_event(ev);
    } catch (const Error& e) {
      emit_error(t, e.code(), e.what());
      payload["reason"] = std::string(to_string(e.code()));
      emit(wire::RobotEventMsg{id_, t, "Failed", payload});
      complete(RobotOutcome::Failed, t);
    }
  }

  // Outbound frames and state

  void publish_frame(TimestampMs t) {
    wire::Detections d{id_, t, wire::Space::Screen, {}};
    for (const auto& b : workspace_.frame().boxes) d.boxes.push_back(cfg_.view.to_screen(b));
    emit(std::move(d));
  }

  void publish_frame_from_scene(TimestampMs t) {
    if (!cfg_.sim_publish_detections || !homography_ || scene_.objects.empty()) return;
    try {
      workspace_.update(detection_frame_from_scene(scene_, *homography_, std::max(t, workspace_.frame().t)));
    } catch (const Error& e) {
      emit_error(t, e.code(), e.what());
      return;
    }
    publish_frame(t);
  }

  void publish_state(TimestampMs t, bool force) {
    wire::State s;
    s.session = id_;
    s.phase = std::string(phase_name(dwell_.phase));
    s.held = robot_.held;
    s.robot = std::string(to_string(robot_.status()));
    s.gripper = std::string(to_string(robot_.gripper));
    s.tcp = {robot_.tcp.X, robot_.tcp.Y, robot_.tcp.Z};
    s.snapping = snapper_.enabled();
    s.calibrated = model_.has_value();
    s.calibrating = calib_.has_value();
    // Compare everything but the timestamp.
    const std::string key = wire::encode(s);
    const bool due = !last_state_t_ || t - *last_state_t_ >= cfg_.heartbeat_ms;
    if (!force && !due && key == last_state_) return;
    if (last_state_t_ && t < *last_state_t_) return;  // keep State monotone
    s.t = t;
    last_state_ = key;
    last_state_t_ = t;
    emit(std::move(s));
  }

  // Calibration

  struct CalibrationRun {
    std::vector<ScreenPoint> layout;
    std::size_t index = 0;
    FixationAverager averager{0};
    std::vector<CalibrationSample> samples;
  };

  void show_calibration_point(TimestampMs t) {
    calib_->averager = FixationAverager(t, cfg_.calib_settle_ms, static_cast<std::size_t>(cfg_.calib_samples));
    emit(wire::CalibTarget{id_, t, static_cast<int>(calib_->index), static_cast<int>(calib_->layout.size()),
                           calib_->layout[calib_->index]});
  }

  void start_calibration(const wire::Control& c) {
    const int n = c.args.value("points", cfg_.calib_points);
    CalibrationRun run;
    run.layout = calibration_point_layout(n, cfg_.screen_w, cfg_.screen_h);
    calib_ = std::move(run);
    show_calibration_point(c.t);
  }

  void ack_calibration_point(TimestampMs t) {
    if (!calib_) throw Error(Errc::InvalidArgument, "calib_point_ack outside calibration");
    calib_->samples.push_back({calib_->averager.mean(), calib_->layout[calib_->index]});
    ++calib_->index;
    if (calib_->index < calib_->layout.size()) {
      show_calibration_point(t);
      return;
    }
    CalibrationRun run = std::move(*calib_);
    calib_.reset();
    try {
      CalibrationModel m = fit_calibration(run.samples, cfg_.calib_degree, t);
      if (!cfg_.calib_model_path.empty()) save_calibration(m, cfg_.calib_model_path);
      model_ = m;
      filter_.reset();
      last_gaze_t_.reset();
      emit(wire::CalibResult{id_, t, true, m.residual_rms, static_cast<int>(run.samples.size()), ""});
    } catch (const Error& e) {
      emit(wire::CalibResult{id_, t, false, 0.0, static_cast<int>(run.samples.size()),
                             std::string(to_string(e.code())) + ": " + e.what()});
    }
  }

  void abort_calibration(TimestampMs t) {
    if (!calib_) throw Error(Errc::InvalidArgument, "abort_calibration outside calibration");
    const int done = static_cast<int>(calib_->samples.size());
    calib_.reset();
    emit(wire::CalibResult{id_, t, false, 0.0, done, std::string(to_string(Errc::AbortedByClient))});
  }

  std::string id_;
  SessionSetup setup_;
  Config cfg_;
  std::optional<CalibrationModel> model_;
  std::optional<Homography> homography_;

  std::deque<wire::Message> queue_;
  std::vector<wire::Message> out_;

  std::optional<FilterState> filter_;
  std::optional<TimestampMs> last_gaze_t_;
  Snapper snapper_;
  InteractionState dwell_;
  Workspace workspace_;
  Scene scene_;
  SimRobot robot_;
  std::optional<TimestampMs> robot_epoch_;
  std::optional<CalibrationRun> calib_;

  std::optional<TimestampMs> last_cursor_t_;
  std::string last_state_;
  std::optional<TimestampMs> last_state_t_;
  std::optional<TimestampMs> last_not_calibrated_t_;
};

/// Append-only record of every inbound and outbound line of a session, in
/// the order they crossed the session boundary.
class SessionLog {
 public:
  void append(const wire::Message& m) { append_line(wire::encode(m)); }
  void append_line(std::string line) {
    std::lock_guard lock(mu_);
    lines_.push_back(line);
    if (sink_) *sink_ << line << '\n';
  }
  void attach_file(const std::string& path) {
    std::lock_guard lock(mu_);
    file_ = std::make_unique<std::ofstream>(path, std::ios::app);
    if (!*file_) throw Error(Errc::IoError, "cannot open log " + path);
    sink_ = file_.get();
  }
  void flush() {
    std::lock_guard lock(mu_);
    if (sink_) sink_->flush();
  }
  std::vector<std::string> lines() const {
    std::lock_guard lock(mu_);
    return lines_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<std::string> lines_;
  std::unique_ptr<std::ofstream> file_;
  std::ostream* sink_ = nullptr;
};

/// Sessions keyed by id, created on first contact from a shared setup. Each
/// entry serializes its own processing; distinct sessions share nothing.
class SessionRegistry {
 public:
  struct Entry {
    explicit Entry(Session s) : session(std::move(s)) {}
    std::mutex mu;
    Session session;
    SessionLog log;
  };

  explicit SessionRegistry(SessionSetup setup, std::string log_dir = {})
      : setup_(std::move(setup)), log_dir_(std::move(log_dir)) {}

  Entry& get(const std::string& id) {
    std::lock_guard lock(mu_);
    auto it = entries_.find(id);
    if (it == entries_.end()) {
      it = entries_.emplace(id, std::make_unique<Entry>(Session(id, setup_))).first;
      if (!log_dir_.empty()) it->second->log.attach_file(log_dir_ + "/" + safe_name(id) + ".jsonl");
    }
    return *it->second;
  }

  /// Logs the inbound message, runs it, logs and returns the outbound ones.
  std::vector<wire::Message> process(const wire::Message& m) {
    Entry& e = get(wire::session_of(m));
    std::lock_guard lock(e.mu);
    e.log.append(m);
    auto out = e.session.process(m);
    for (const auto& o : out) e.log.append(o);
    return out;
  }

  std::vector<std::string> ids() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> out;
    for (const auto& [k, _] : entries_) out.push_back(k);
    return out;
  }

  void flush() {
    std::lock_guard lock(mu_);
    for (auto& [_, e] : entries_) e->log.flush();
  }

  static std::string safe_name(const std::string& id) {
    std::string s;
    for (char c : id) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return s;
  }

 private:
  SessionSetup setup_;
  std::string log_dir_;
  mutable std::mutex mu_;
  std::map<std::string, std::unique_ptr<Entry>> entries_;
};

/// Replays a trace: inbound lines are fed to fresh sessions, outbound lines
/// already present in the trace are ignored. Writes the outbound transcript
/// and returns the number of inbound messages processed.
inline std::size_t replay(std::istream& trace, std::ostream& transcript, const SessionSetup& setup) {
  SessionRegistry registry(setup);
  std::size_t n = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(trace, line)) {
    ++line_no;
    if (line.empty() || line.find_first_not_of(" \t\r") == std::string::npos) continue;
    wire::Message m;
    try {
      m = wire::decode(line);
    } catch (const Error& e) {
      transcript << wire::encode(wire::ErrorMsg{"-", 0, std::string(to_string(e.code())),
                                                "line " + std::to_string(line_no) + ": " + e.what()})
                 << '\n';
      continue;
    }
    if (!wire::is_inbound(m)) continue;
    ++n;
    for (const auto& o : registry.process(m)) transcript << wire::encode(o) << '\n';
  }
  return n;
}

/// Supplies the iris reading a user would produce while looking at `target`
/// at time `t`.
using GazeProducer = std::function<IrisPoint(ScreenPoint target, TimestampMs t)>;

struct CalibrationDrive {
  int points = 35;
  TimestampMs sample_period_ms = 33;
  TimestampMs hold_ms = 900;  // per point, before the ack
  std::optional<int> abort_after;  // abort once this many points are acknowledged
};

/// Walks a session through a full calibration with a synthetic producer,
/// sending the same messages a client would. Returns the fitted model, or
/// throws AbortedByClient / the fit error reported by the session.
inline CalibrationModel run_calibration_sequence(Session& session, const GazeProducer& producer,
                                                 const CalibrationDrive& drive, TimestampMs t0 = 0,
                                                 std::vector<wire::Message>* transcript = nullptr) {
  TimestampMs t = t0;
  auto send = [&](wire::Message m) {
    auto out = session.process(std::move(m));
    if (transcript) transcript->insert(transcript->end(), out.begin(), out.end());
    return out;
  };
  auto find_target = [](const std::vector<wire::Message>& out) -> std::optional<wire::CalibTarget> {
    for (const auto& m : out)
      if (auto* c = std::get_if<wire::CalibTarget>(&m)) return *c;
    return std::nullopt;
  };

  auto out = send(wire::Control{session.id(), t, "start_calibration", {{"points", drive.points}}});
  auto target = find_target(out);
  if (!target) throw Error(Errc::InvalidArgument, "session did not enter calibration");
  int acked = 0;
  while (true) {
    for (TimestampMs dt = drive.sample_period_ms; dt <= drive.hold_ms; dt += drive.sample_period_ms) {
      const IrisPoint p = producer(target->point, t + dt);
      send(wire::GazeSample{session.id(), t + dt, p.u, p.v});
    }
    t += drive.hold_ms + 1;
    out = send(wire::Control{session.id(), t, "calib_point_ack", nlohmann::json::object()});
    ++acked;
    for (const auto& m : out) {
      if (const auto* e = std::get_if<wire::ErrorMsg>(&m)) throw Error(Errc::InsufficientSamples, e->message);
      if (const auto* r = std::get_if<wire::CalibResult>(&m)) {
        if (!r->ok) throw Error(Errc::DegenerateDesign, r->reason);
        return *session.model();
      }
    }
    if (drive.abort_after && acked >= *drive.abort_after) {
      send(wire::Control{session.id(), t + 1, "abort_calibration", nlohmann::json::object()});
      throw Error(Errc::AbortedByClient, "calibration aborted after " + std::to_string(acked) + " points");
    }
    target = find_target(out);
    if (!target) throw Error(Errc::InvalidArgument, "calibration sequence stalled");
  }
}

}  // namespace gazegrasp
