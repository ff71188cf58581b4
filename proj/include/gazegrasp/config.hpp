#pragma once

// Runtime configuration. Keys are dotted names ("filter.q"); a config file is
// a JSON object, either flat with dotted keys or nested. Every key can be
// overridden by an environment variable GAZEGRASP_<KEY> with dots replaced by
// underscores and upper-cased (GAZEGRASP_FILTER_Q). Environment values are
// parsed as JSON when possible, else taken as strings.

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gazegrasp/dwell.hpp"
#include "gazegrasp/error.hpp"
#include "gazegrasp/filter.hpp"
#include "gazegrasp/geometry.hpp"
#include "gazegrasp/robot_sim.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp {

inline constexpr const char* kEnvPrefix = "GAZEGRASP_";

struct Config {
  FilterParams filter;
  bool snap_enabled = true;
  double snap_hysteresis_pct = 10.0;
  DwellParams dwell;
  SimParams sim;
  bool sim_publish_detections = true;

  double screen_w = 1920.0;
  double screen_h = 1080.0;
  ViewMapping view{3.0, 2.25, 0.0, 0.0};  // 640x480 camera stream shown full screen

  int calib_points = 35;
  int calib_degree = 3;
  TimestampMs calib_settle_ms = 500;
  int calib_samples = 10;
  std::string calib_model_path;

  std::string geometry_path;
  std::string scene_path;

  double pipeline_hz = 30.0;
  TimestampMs heartbeat_ms = 1000;
  TimestampMs idle_tick_ms = 100;

  std::string serve_host = "127.0.0.1";
  int serve_port = 7878;
  std::string serve_log_dir;
  std::string serve_static_dir;

  void validate() const {
    filter.validate();
    if (!(snap_hysteresis_pct >= 0.0)) throw Error(Errc::InvalidArgument, "snap.hysteresis_pct must be >= 0");
    if (dwell.dwell_ms <= 0 || dwell.grace_ms < 0 || !(dwell.drift_px >= 0.0)) {
      throw Error(Errc::InvalidArgument, "dwell parameters out of range");
    }
    if (!(sim.speed_mps > 0.0) || !(sim.clearance_m >= 0.0) || !(sim.gripper_ms >= 0.0) ||
        !(sim.fail_rate >= 0.0 && sim.fail_rate <= 1.0)) {
      throw Error(Errc::InvalidArgument, "sim parameters out of range");
    }
    if (!(screen_w > 0.0) || !(screen_h > 0.0)) throw Error(Errc::InvalidArgument, "screen size must be positive");
    if (view.scale_x == 0.0 || view.scale_y == 0.0) throw Error(Errc::InvalidArgument, "view scale cannot be 0");
    if (calib_points < 1 || calib_degree < 1 || calib_samples < 1 || calib_settle_ms < 0) {
      throw Error(Errc::InvalidArgument, "calibration parameters out of range");
    }
    if (!(pipeline_hz >= 0.0) || heartbeat_ms <= 0 || idle_tick_ms < 0) throw Error(Errc::InvalidArgument, "pipeline rates out of range");
    if (serve_port < 0 || serve_port > 65535) throw Error(Errc::InvalidArgument, "serve.port out of range");
  }
};

namespace detail {

using Setter = std::function<void(Config&, const nlohmann::json&)>;

template <typename T>
Setter set_field(T Config::*field) {
  return [field](Config& c, const nlohmann::json& v) { c.*field = v.get<T>(); };
}

inline std::vector<double> numbers(const nlohmann::json& v, std::size_t n, const std::string& key) {
  auto out = v.get<std::vector<double>>();
  if (out.size() != n) throw Error(Errc::ParseError, key + " needs " + std::to_string(n) + " numbers");
  return out;
}

inline const std::map<std::string, Setter>& config_keys() {
  static const std::map<std::string, Setter> keys = {
      {"filter.q", [](Config& c, const nlohmann::json& v) { c.filter.q = v.get<double>(); }},
      {"filter.r", [](Config& c, const nlohmann::json& v) { c.filter.r = v.get<double>(); }},
      {"filter.p0", [](Config& c, const nlohmann::json& v) { c.filter.p0 = v.get<double>(); }},
      {"filter.saccade_px", [](Config& c, const nlohmann::json& v) { c.filter.saccade_px = v.get<double>(); }},
      {"snap.enabled", set_field(&Config::snap_enabled)},
      {"snap.hysteresis_pct", set_field(&Config::snap_hysteresis_pct)},
      {"dwell.ms", [](Config& c, const nlohmann::json& v) { c.dwell.dwell_ms = v.get<TimestampMs>(); }},
      {"dwell.grace_ms", [](Config& c, const nlohmann::json& v) { c.dwell.grace_ms = v.get<TimestampMs>(); }},
      {"dwell.drift_px", [](Config& c, const nlohmann::json& v) { c.dwell.drift_px = v.get<double>(); }},
      {"workspace.rect",
       [](Config& c, const nlohmann::json& v) {
         const auto r = numbers(v, 4, "workspace.rect");
         c.dwell.workspace_rect = {r[0], r[1], r[2], r[3]};
       }},
      {"workspace.bounds",
       [](Config& c, const nlohmann::json& v) {
         const auto b = numbers(v, 6, "workspace.bounds");
         c.sim.bounds = {{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};
       }},
      {"sim.speed_mps", [](Config& c, const nlohmann::json& v) { c.sim.speed_mps = v.get<double>(); }},
      {"sim.clearance_m", [](Config& c, const nlohmann::json& v) { c.sim.clearance_m = v.get<double>(); }},
      {"sim.gripper_ms", [](Config& c, const nlohmann::json& v) { c.sim.gripper_ms = v.get<double>(); }},
      {"sim.fail_rate", [](Config& c, const nlohmann::json& v) { c.sim.fail_rate = v.get<double>(); }},
      {"sim.seed", [](Config& c, const nlohmann::json& v) { c.sim.seed = v.get<std::uint64_t>(); }},
      {"sim.publish_detections", set_field(&Config::sim_publish_detections)},
      {"screen.w", set_field(&Config::screen_w)},
      {"screen.h", set_field(&Config::screen_h)},
      {"view.scale_x", [](Config& c, const nlohmann::json& v) { c.view.scale_x = v.get<double>(); }},
      {"view.scale_y", [](Config& c, const nlohmann::json& v) { c.view.scale_y = v.get<double>(); }},
      {"view.offset_x", [](Config& c, const nlohmann::json& v) { c.view.offset_x = v.get<double>(); }},
      {"view.offset_y", [](Config& c, const nlohmann::json& v) { c.view.offset_y = v.get<double>(); }},
      {"calib.points", set_field(&Config::calib_points)},
      {"calib.degree", set_field(&Config::calib_degree)},
      {"calib.settle_ms", set_field(&Config::calib_settle_ms)},
      {"calib.samples_per_point", set_field(&Config::calib_samples)},
      {"calib.model_path", set_field(&Config::calib_model_path)},
      {"geometry.path", set_field(&Config::geometry_path)},
      {"scene.path", set_field(&Config::scene_path)},
      {"pipeline.hz", set_field(&Config::pipeline_hz)},
      {"pipeline.heartbeat_ms", set_field(&Config::heartbeat_ms)},
      {"pipeline.idle_tick_ms", set_field(&Config::idle_tick_ms)},
      {"serve.host", set_field(&Config::serve_host)},
      {"serve.port", set_field(&Config::serve_port)},
      {"serve.log_dir", set_field(&Config::serve_log_dir)},
      {"serve.static_dir", set_field(&Config::serve_static_dir)},
  };
  return keys;
}

inline void flatten(const nlohmann::json& j, const std::string& prefix, std::map<std::string, nlohmann::json>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object() && !config_keys().count(key)) {
      flatten(*it, key, out);
    } else {
      out[key] = *it;
    }
  }
}

inline std::string env_name(const std::string& key) {
  std::string name = kEnvPrefix;
  for (char ch : key) name += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return name;
}

}  // namespace detail

inline std::vector<std::string> config_key_names() {
  std::vector<std::string> names;
  for (const auto& [k, _] : detail::config_keys()) names.push_back(k);
  return names;
}

inline void set_config_value(Config& c, const std::string& key, const nlohmann::json& value) {
  const auto& keys = detail::config_keys();
  auto it = keys.find(key);
  if (it == keys.end()) throw Error(Errc::ParseError, "unknown config key '" + key + "'");
  try {
    it->second(c, value);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::ParseError, "config key '" + key + "': " + e.what());
  }
}

inline void apply_config_json(Config& c, const nlohmann::json& j) {
  if (!j.is_object()) throw Error(Errc::ParseError, "config must be a JSON object");
  std::map<std::string, nlohmann::json> flat;
  detail::flatten(j, "", flat);
  for (const auto& [k, v] : flat) set_config_value(c, k, v);
}

/// Applies GAZEGRASP_* overrides. `getenv` is injectable for tests.
inline void apply_env_overrides(Config& c, const std::function<const char*(const char*)>& getenv = std::getenv) {
  for (const auto& key : config_key_names()) {
    const std::string name = detail::env_name(key);
    const char* raw = getenv(name.c_str());
    if (!raw) continue;
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = std::string(raw);
    set_config_value(c, key, value);
  }
}

inline Config load_config(const std::string& path) {
  Config c;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot read " + path);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::ParseError, e.what());
    }
    apply_config_json(c, j);
  }
  apply_env_overrides(c);
  c.validate();
  return c;
}

}  // namespace gazegrasp
