#pragma once

// Synthetic snapping ON/OFF target-acquisition experiment.
//
// A trial presents one target. The agent saccades toward it with a landing
// error, then holds fixation with per-sample jitter. Every reaction interval
// it looks at the displayed cursor: if the cursor is off the target it makes
// a corrective saccade; with snapping off it also keeps nudging its gaze
// toward the object center while the cursor is visibly off-center. Samples go
// through the real filter, snapper and dwell machine; the trial ends when the
// dwell machine emits a Pick for the target or after the timeout.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "gazegrasp/dwell.hpp"
#include "gazegrasp/error.hpp"
#include "gazegrasp/filter.hpp"
#include "gazegrasp/stats.hpp"
#include "gazegrasp/workspace.hpp"

namespace gazegrasp::harness {

enum class Condition { On, Off };

inline std::string_view to_string(Condition c) { return c == Condition::On ? "ON" : "OFF"; }

inline Condition condition_from_string(std::string_view s) {
  if (s == "ON") return Condition::On;
  if (s == "OFF") return Condition::Off;
  throw Error(Errc::ParseError, "unknown condition '" + std::string(s) + "'");
}

struct AgentParams {
  double saccade_gain = 0.6;    // fraction of the remaining distance covered per sample
  double jitter_px = 15.0;      // fixation noise sigma
  double undershoot_px = 30.0;  // landing error sigma of the primary saccade
  std::uint64_t seed = 1;

  TimestampMs reaction_ms = 250;      // interval between looks at the cursor
  double correction_noise = 0.2;      // corrective saccade error, fraction of amplitude
  double correction_floor_px = 10.0;  // corrective saccade error floor (sigma)
  double center_tolerance_px = 4.0;   // "cursor is on the center" threshold

  void validate() const {
    if (!(saccade_gain > 0.0 && saccade_gain <= 1.0) || !(jitter_px >= 0.0) || !(undershoot_px >= 0.0) ||
        reaction_ms <= 0 || !(correction_noise >= 0.0) || !(correction_floor_px >= 0.0) || !(center_tolerance_px >= 0.0)) {
      throw Error(Errc::InvalidArgument, "agent parameters out of range");
    }
  }
};

struct HarnessScene {
  std::vector<BBox> targets;  // screen space
  double screen_w = 1920.0;
  double screen_h = 1080.0;
};

/// Five tabletop objects laid out on a 1920x1080 screen.
inline HarnessScene default_scene() {
  HarnessScene s;
  s.targets = {
      {1, "cup", 420.0, 360.0, 90.0, 110.0},   {2, "knife", 960.0, 300.0, 160.0, 28.0},
      {3, "bottle", 1500.0, 420.0, 70.0, 170.0}, {4, "phone", 640.0, 780.0, 60.0, 110.0},
      {5, "mouse", 1280.0, 760.0, 55.0, 40.0},
  };
  return s;
}

struct PipelineParams {
  FilterParams filter;
  double hysteresis_pct = 10.0;
  TimestampMs dwell_ms = 3000;
  TimestampMs grace_ms = 150;
  double sample_hz = 30.0;
  TimestampMs timeout_ms = 30'000;
};

struct TrialResult {
  int participant = 0;
  Condition condition = Condition::On;
  int trial = 0;
  std::string target_label;
  TimestampMs completion_ms = 0;
  bool timeout = false;
  int dwell_resets = 0;  // not exported to CSV
};

struct TrialSpec {
  std::size_t target_index = 0;
  ScreenPoint start_gaze;
  std::uint64_t seed = 0;
};

inline TrialResult run_agent_trial(const AgentParams& agent, const HarnessScene& scene, Condition condition,
                                   const TrialSpec& spec, const PipelineParams& pipe = {}) {
  agent.validate();
  if (scene.targets.empty()) throw Error(Errc::InvalidArgument, "scene has no targets");
  if (spec.target_index >= scene.targets.size()) throw Error(Errc::InvalidArgument, "target index out of range");

  const BBox& target = scene.targets[spec.target_index];
  const ScreenPoint center = target.center();
  DetectionFrame frame{0, scene.targets};

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> unit(0.0, 1.0);

  ScreenPoint gaze = spec.start_gaze;
  ScreenPoint aim{center.x + agent.undershoot_px * unit(rng), center.y + agent.undershoot_px * unit(rng)};

  Snapper snapper(condition == Condition::On, pipe.hysteresis_pct);
  InteractionState dwell;
  dwell.params.dwell_ms = pipe.dwell_ms;
  dwell.params.grace_ms = pipe.grace_ms;
  dwell.params.workspace_rect = {0.0, 0.0, scene.screen_w, scene.screen_h};

  std::optional<FilterState> filter;
  TimestampMs next_look = agent.reaction_ms;
  const double period_ms = 1000.0 / pipe.sample_hz;

  TrialResult result;
  result.condition = condition;
  result.target_label = target.label;

  for (long k = 0;; ++k) {
    const auto t = static_cast<TimestampMs>(std::llround(static_cast<double>(k) * period_ms));
    if (t > pipe.timeout_ms) {
      result.completion_ms = pipe.timeout_ms;
      result.timeout = true;
      break;
    }
    gaze.x += agent.saccade_gain * (aim.x - gaze.x);
    gaze.y += agent.saccade_gain * (aim.y - gaze.y);
    const ScreenPoint observed{gaze.x + agent.jitter_px * unit(rng), gaze.y + agent.jitter_px * unit(rng)};

    ScreenPoint smoothed;
    if (!filter) {
      filter = filter_init(observed, t, pipe.filter);
      smoothed = observed;
    } else {
      auto step = filter_step(*filter, observed, t);
      filter = step.state;
      smoothed = step.smoothed;
    }

    const CursorState cursor = snapper(smoothed, frame, ViewMapping{});
    auto tick = dwell_tick(dwell, cursor, t);
    dwell = tick.state;
    if (tick.request && tick.request->kind == RequestKind::Pick && tick.request->object_id == target.id) {
      result.completion_ms = t;
      break;
    }
    if (tick.request) {
      // Picked the wrong object: the robot would go there; count it as a
      // reset and keep trying.
      dwell = on_robot_done(dwell, RobotOutcome::Failed);
      ++dwell.resets;
    }

    if (t >= next_look) {
      next_look = t + agent.reaction_ms;
      const bool on_target = cursor.target_id && *cursor.target_id == target.id;
      const double ex = center.x - cursor.snapped.x, ey = center.y - cursor.snapped.y;
      const double err = std::hypot(ex, ey);
      const bool wants_correction = !on_target || err > agent.center_tolerance_px;
      if (wants_correction && err > 0.0) {
        const double sigma = std::hypot(agent.correction_noise * err, agent.correction_floor_px);
        aim.x += ex + sigma * unit(rng);
        aim.y += ey + sigma * unit(rng);
      }
    }
  }
  result.dwell_resets = dwell.resets;
  return result;
}

struct ExperimentConfig {
  int participants = 13;
  int trials = 40;
  std::uint64_t seed = 1;
  bool fixed_order = false;  // OFF block first, then ON
  AgentParams agent;
  PipelineParams pipeline;
  HarnessScene scene = default_scene();
  double participant_spread = 0.2;  // per-participant scale of jitter/undershoot, +-20%
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t mix(std::uint64_t a, std::uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

}  // namespace detail

/// Runs every participant through both conditions. Results are ordered by
/// (participant, block, trial).
inline std::vector<TrialResult> run_experiment(const ExperimentConfig& cfg) {
  if (cfg.participants < 1 || cfg.trials < 1) throw Error(Errc::InvalidArgument, "need participants and trials");
  std::vector<TrialResult> out;
  out.reserve(static_cast<std::size_t>(cfg.participants * cfg.trials * 2));
  const std::size_t n_targets = cfg.scene.targets.size();

  for (int p = 1; p <= cfg.participants; ++p) {
    const std::uint64_t pseed = detail::mix(cfg.seed, static_cast<std::uint64_t>(p));
    std::mt19937_64 prng(pseed);
    std::uniform_real_distribution<double> spread(1.0 - cfg.participant_spread, 1.0 + cfg.participant_spread);
    AgentParams agent = cfg.agent;
    agent.jitter_px *= spread(prng);
    agent.undershoot_px *= spread(prng);
    agent.seed = pseed;

    std::vector<Condition> order{Condition::Off, Condition::On};
    if (!cfg.fixed_order && std::uniform_int_distribution<int>(0, 1)(prng) == 1) {
      std::swap(order[0], order[1]);
    }

    for (Condition cond : order) {
      // Randomly ordered targets: balanced repeats of the scene, shuffled.
      std::vector<std::size_t> seq;
      for (int i = 0; i < cfg.trials; ++i) seq.push_back(static_cast<std::size_t>(i) % n_targets);
      std::shuffle(seq.begin(), seq.end(), prng);

      ScreenPoint start{cfg.scene.screen_w / 2.0, cfg.scene.screen_h / 2.0};
      for (int i = 0; i < cfg.trials; ++i) {
        TrialSpec spec;
        spec.target_index = seq[static_cast<std::size_t>(i)];
        spec.start_gaze = start;
        spec.seed = detail::mix(pseed, detail::mix(cond == Condition::On ? 1 : 2, static_cast<std::uint64_t>(i)));
        auto r = run_agent_trial(agent, cfg.scene, cond, spec, cfg.pipeline);
        r.participant = p;
        r.trial = i + 1;
        out.push_back(r);
        start = cfg.scene.targets[spec.target_index].center();
      }
    }
  }
  return out;
}

inline double improvement(double mean_off, double mean_on) { return (mean_off - mean_on) / mean_off; }

struct ExperimentReport {
  stats::Summary on;  // seconds
  stats::Summary off;
  std::size_t timeouts_on = 0;
  std::size_t timeouts_off = 0;
  // participant -> {OFF mean, ON mean}, seconds
  std::map<int, std::pair<double, double>> participant_means;
  double improvement = 0.0;
  stats::AnovaResult one_way;
  stats::AnovaResult repeated;
};

inline ExperimentReport summarize_experiment(const std::vector<TrialResult>& results) {
  std::vector<double> on, off;
  std::map<int, std::pair<std::vector<double>, std::vector<double>>> per;
  ExperimentReport rep;
  for (const auto& r : results) {
    const double s = static_cast<double>(r.completion_ms) / 1000.0;
    if (r.condition == Condition::On) {
      on.push_back(s);
      per[r.participant].second.push_back(s);
      rep.timeouts_on += r.timeout;
    } else {
      off.push_back(s);
      per[r.participant].first.push_back(s);
      rep.timeouts_off += r.timeout;
    }
  }
  if (on.empty() || off.empty()) {
    throw Error(Errc::InvalidArgument, "both ON and OFF conditions are required");
  }
  rep.on = stats::summarize(on);
  rep.off = stats::summarize(off);
  rep.improvement = improvement(rep.off.mean, rep.on.mean);

  std::vector<double> off_means, on_means;
  std::vector<std::vector<double>> table;
  for (const auto& [p, cells] : per) {
    if (cells.first.empty() || cells.second.empty()) {
      throw Error(Errc::IncompleteMatrix, "participant " + std::to_string(p) + " lacks a condition");
    }
    const double mo = stats::detail::mean(cells.first), mn = stats::detail::mean(cells.second);
    rep.participant_means[p] = {mo, mn};
    off_means.push_back(mo);
    on_means.push_back(mn);
    table.push_back({mo, mn});
  }
  if (table.size() >= 2) {
    rep.one_way = stats::one_way_anova({off_means, on_means});
    rep.repeated = stats::repeated_measures_anova(table);
  }
  return rep;
}

// results.csv: participant,condition,trial,target,completion_ms,timeout_flag

inline void write_results_csv(std::ostream& out, const std::vector<TrialResult>& results) {
  out << "participant,condition,trial,target,completion_ms,timeout_flag\n";
  for (const auto& r : results) {
    out << r.participant << ',' << to_string(r.condition) << ',' << r.trial << ',' << r.target_label << ','
        << r.completion_ms << ',' << (r.timeout ? 1 : 0) << '\n';
  }
}

inline std::vector<TrialResult> read_results_csv(std::istream& in) {
  std::vector<TrialResult> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("participant", 0) == 0) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": expected 6 columns");
    try {
      TrialResult r;
      r.participant = std::stoi(cells[0]);
      r.condition = condition_from_string(cells[1]);
      r.trial = std::stoi(cells[2]);
      r.target_label = cells[3];
      r.completion_ms = std::stoll(cells[4]);
      r.timeout = std::stoi(cells[5]) != 0;
      out.push_back(r);
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, "line " + std::to_string(lineno) + ": bad number");
    }
  }
  return out;
}

/// One row per trial, ready for a box plot of completion time by condition.
inline void write_boxplot_csv(std::ostream& out, const std::vector<TrialResult>& results) {
  out << "condition,participant,trial,completion_s\n";
  out << std::setprecision(10);
  for (const auto& r : results) {
    out << to_string(r.condition) << ',' << r.participant << ',' << r.trial << ','
        << static_cast<double>(r.completion_ms) / 1000.0 << '\n';
  }
}

inline void print_report(std::ostream& out, const ExperimentReport& rep) {
  auto line = [&](std::string_view name, const stats::Summary& s, std::size_t timeouts) {
    out << "  " << name << ": n=" << s.n << " mean=" << s.mean << " s median=" << s.median << " s sd=" << s.sd
        << " q1=" << s.q1 << " q3=" << s.q3 << " timeouts=" << timeouts << '\n';
  };
  const auto flags = out.flags();
  out << std::fixed << std::setprecision(3);
  out << "Completion time by condition\n";
  line("OFF", rep.off, rep.timeouts_off);
  line("ON ", rep.on, rep.timeouts_on);
  out << "Improvement (mean OFF - mean ON) / mean OFF: " << std::setprecision(1) << rep.improvement * 100.0
      << "%\n";
  out << std::setprecision(3) << "Per-participant means (OFF, ON):\n";
  for (const auto& [p, m] : rep.participant_means) {
    out << "  P" << p << ": " << m.first << ", " << m.second << '\n';
  }
  auto anova = [&](const stats::AnovaResult& a) {
    out << "  " << stats::to_string(a.kind) << ": F(" << a.df1 << "," << a.df2 << ") = " << std::setprecision(4)
        << a.F << ", p = " << std::setprecision(6) << a.p << (a.p < 0.05 ? "  (significant at 0.05)" : "")
        << '\n'
        << std::setprecision(3);
  };
  out << "ANOVA on participant means:\n";
  anova(rep.one_way);
  anova(rep.repeated);
  out.flags(flags);
}

}  // namespace gazegrasp::harness
