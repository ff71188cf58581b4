#include <chrono>
#include <csignal>
#include <filesystem>
#include <functional>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <boost/asio/io_context.hpp>
#include <boost/asio/signal_set.hpp>

#include "CLI11.hpp"
#include "gazegrasp/calib.hpp"
#include "gazegrasp/config.hpp"
#include "gazegrasp/geometry.hpp"
#include "gazegrasp/harness.hpp"
#include "gazegrasp/server.hpp"
#include "gazegrasp/session.hpp"

using namespace gazegrasp;
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  return in;
}

ServerOptions server_options(const Config& cfg) {
  ServerOptions o;
  o.host = cfg.serve_host;
  o.port = static_cast<std::uint16_t>(cfg.serve_port);
  o.idle_tick_ms = cfg.idle_tick_ms;
  o.static_dir = cfg.serve_static_dir;
  return o;
}

// Runs the endpoint until SIGINT/SIGTERM, or until `done` returns true.
void run_server(const Config& cfg, const std::function<bool()>& done = {}) {
  if (!cfg.serve_log_dir.empty()) fs::create_directories(cfg.serve_log_dir);
  SessionRegistry registry(setup_from_config(cfg), cfg.serve_log_dir);
  Server server(registry, server_options(cfg));
  const auto port = server.start();
  std::cout << "listening on " << cfg.serve_host << ":" << port << std::endl;

  boost::asio::io_context signals_ioc;
  boost::asio::signal_set signals(signals_ioc, SIGINT, SIGTERM);
  bool stop = false;
  signals.async_wait([&](const boost::system::error_code& ec, int) { stop = !ec; });
  while (!stop && !(done && done())) {
    signals_ioc.run_for(std::chrono::milliseconds(200));
    registry.flush();
  }
  server.stop();
  std::cout << "stopped" << std::endl;
}

std::optional<fs::file_time_type> mtime(const std::string& path) {
  std::error_code ec;
  const auto t = fs::last_write_time(path, ec);
  if (ec) return std::nullopt;
  return t;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaze-driven pick and place service"};
  app.require_subcommand(1);
  std::string config_path;
  app.add_option("-c,--config", config_path, "JSON config file; GAZEGRASP_* variables override it")
      ->envname("GAZEGRASP_CONFIG");

  auto* serve = app.add_subcommand("serve", "Run the stream endpoint (line TCP, WebSocket and static HTTP on one port)");
  std::optional<std::string> host, log_dir, static_dir;
  std::optional<int> port;
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port; 0 picks a free one");
  serve->add_option("--log-dir", log_dir, "Directory for per-session logs");
  serve->add_option("--static-dir", static_dir, "Directory served to plain HTTP GET");

  auto* calibrate = app.add_subcommand("calibrate", "Fit a gaze model or a camera-to-table homography");
  std::string samples_path, pairs_path, model_out, geometry_out;
  bool live = false;
  double z_table = 0.0;
  auto* samples_opt = calibrate->add_option("--samples", samples_path, "Samples file, one 'u v x y' per line")
                          ->check(CLI::ExistingFile);
  auto* live_flag = calibrate->add_flag("--live", live, "Serve and wait for a client to finish a calibration");
  samples_opt->excludes(live_flag);
  calibrate->add_option("--geometry", pairs_path, "Correspondence file, one 'px py X Y' per line")
                           ->check(CLI::ExistingFile);
  calibrate->add_option("--out", model_out, "Where to write the gaze model (default calib.model_path)");
  calibrate->add_option("--geometry-out", geometry_out, "Where to write the geometry (default ./geometry.json)");
  calibrate->add_option("--host", host, "Bind address for --live");
  calibrate->add_option("--port", port, "Port for --live");
  calibrate->add_option("--z-table", z_table, "Table height of the correspondence plane, metres");

  auto* replay_cmd = app.add_subcommand("replay", "Replay a session log offline and write the outbound transcript");
  std::string trace_path, transcript_path = "-";
  replay_cmd->add_option("--trace", trace_path, "Session log or trace (JSON lines)")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", transcript_path, "Transcript path, '-' for stdout");

  auto* simulate = app.add_subcommand("simulate", "Run the simulated ON/OFF within-subject experiment");
  harness::ExperimentConfig exp;
  std::string results_path;
  simulate->add_option("--participants", exp.participants, "Number of simulated participants")->check(CLI::PositiveNumber);
  simulate->add_option("--trials", exp.trials, "Trials per condition")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", exp.seed, "Seed");
  simulate->add_option("--out", results_path, "Results CSV")->required();
  simulate->add_flag("--fixed-order", exp.fixed_order, "OFF block first for everyone instead of counterbalancing");

  auto* stats_cmd = app.add_subcommand("stats", "Print the report for a results CSV and write the box-plot export");
  std::string stats_in, box_out;
  stats_cmd->add_option("--in", stats_in, "Results CSV")->required()->check(CLI::ExistingFile);
  stats_cmd->add_option("--box", box_out, "Box-plot CSV (default <in>_box.csv)");

  CLI11_PARSE(app, argc, argv);

  try {
    Config cfg = load_config(config_path);
    if (host) cfg.serve_host = *host;
    if (port) cfg.serve_port = *port;

    if (*serve) {
      if (log_dir) cfg.serve_log_dir = *log_dir;
      if (static_dir) cfg.serve_static_dir = *static_dir;
      cfg.validate();
      run_server(cfg);
    } else if (*calibrate) {
      if (samples_path.empty() && !live && pairs_path.empty()) {
        throw Error(Errc::InvalidArgument, "calibrate needs --samples, --live or --geometry");
      }
      if (!model_out.empty()) cfg.calib_model_path = model_out;
      if (cfg.calib_model_path.empty()) cfg.calib_model_path = "calibration.json";
      if (!samples_path.empty()) {
        auto in = open_in(samples_path);
        const auto samples = parse_calibration_samples(in);
        const auto model = fit_calibration(samples, cfg.calib_degree);
        save_calibration(model, cfg.calib_model_path);
        std::cout << "fitted degree " << model.degree << " from " << samples.size() << " samples, residual rms "
                  << model.residual_rms << " px -> " << cfg.calib_model_path << "\n";
      }
      if (!pairs_path.empty()) {
        auto in = open_in(pairs_path);
        const auto pairs = parse_pairs(in);
        GeometryConfig g;
        g.homography = estimate_homography(pairs, z_table);
        const std::string out = geometry_out.empty() ? "geometry.json" : geometry_out;
        save_geometry(g, out);
        std::cout << "homography from " << pairs.size() << " pairs, reprojection rms " << g.homography.reprojection_rms_px
                  << " px -> " << out << "\n";
      }
      if (live) {
        // Sessions write the model file themselves when a calibration succeeds.
        const auto before = mtime(cfg.calib_model_path);
        std::cout << "waiting for a client to complete a calibration" << std::endl;
        run_server(cfg, [&] {
          const auto now = mtime(cfg.calib_model_path);
          return now && now != before;
        });
        if (mtime(cfg.calib_model_path) != before) {
          const auto model = load_calibration(cfg.calib_model_path);
          std::cout << "residual rms " << model.residual_rms << " px -> " << cfg.calib_model_path << "\n";
        }
      }
    } else if (*replay_cmd) {
      auto in = open_in(trace_path);
      std::size_t n = 0;
      if (transcript_path == "-") {
        n = replay(in, std::cout, setup_from_config(cfg));
      } else {
        auto out = open_out(transcript_path);
        n = replay(in, out, setup_from_config(cfg));
      }
      std::cerr << "replayed " << n << " inbound messages\n";
    } else if (*simulate) {
      const auto results = harness::run_experiment(exp);
      auto out = open_out(results_path);
      harness::write_results_csv(out, results);
      std::cout << "wrote " << results.size() << " trials to " << results_path << "\n";
    } else if (*stats_cmd) {
      auto in = open_in(stats_in);
      const auto results = harness::read_results_csv(in);
      harness::print_report(std::cout, harness::summarize_experiment(results));
      if (box_out.empty()) {
        const fs::path p(stats_in);
        box_out = (p.parent_path() / (p.stem().string() + "_box.csv")).string();
      }
      auto box = open_out(box_out);
      harness::write_boxplot_csv(box, results);
      std::cout << "box-plot data -> " << box_out << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
