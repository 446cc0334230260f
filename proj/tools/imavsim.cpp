// imavsim: command-line front end of the simulator.
//
//   imavsim run <preset|config.json> [--seed N] [--precision single|double] [--out DIR]
//   imavsim replay <log> [--gains FILE]
//   imavsim compare-precision <preset|config.json> [--seed N]
//   imavsim report <log>
//   imavsim serve [preset|config.json] [--host H] [--port P] [--factor F] ...
//   imavsim presets
//   imavsim config <preset|config.json>
//
// Exit status: 0 when every configured threshold passes, 1 when a threshold
// fails or the run aborts, 2 on usage or configuration errors.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "imav/simulation.hpp"
#include "imav/telemetry/server.hpp"

namespace {

using imav::Json;

constexpr int kPass = 0;
constexpr int kFail = 1;
constexpr int kUsage = 2;

bool print_thresholds(const std::vector<imav::ThresholdResult>& results) {
  bool ok = true;
  for (const auto& r : results) {
    std::ostringstream bound;
    if (r.min) bound << ">= " << *r.min;
    if (r.min && r.max) bound << ", ";
    if (r.max) bound << "<= " << *r.max;
    std::cout << (r.pass ? "PASS " : "FAIL ") << std::left << std::setw(30) << r.metric << ' ';
    if (r.value) std::cout << std::setprecision(6) << *r.value; else std::cout << "n/a";
    std::cout << "  (" << bound.str() << ")\n";
    ok = ok && r.pass;
  }
  return ok;
}

int cmd_run(const std::string& source, std::optional<std::uint64_t> seed,
            std::optional<std::string> precision, const std::string& out_dir) {
  imav::ExperimentConfig cfg = imav::load_config(source);
  if (seed) cfg.seed = *seed;
  if (precision) cfg.precision = imav::parse_precision(*precision);
  if (const auto errs = cfg.validation_errors(); !errs.empty()) {
    std::cerr << "invalid configuration:\n";
    for (const auto& e : errs) std::cerr << "  - " << e << '\n';
    return kUsage;
  }
  const imav::ExperimentResult res = imav::run_experiment(cfg);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    std::string stem = cfg.name + "_seed" + std::to_string(cfg.seed);
    if (cfg.precision == imav::Precision::Single) stem += "_single";
    const std::string path = (std::filesystem::path(out_dir) / stem).string();
    res.log.save(path);
    std::cout << "log: " << path << ".csv\n";
  }
  std::cout << "config_hash: " << imav::config_hash(cfg) << "\nlog_hash: " << res.log.hash()
            << "\nrows: " << res.log.rows.size() << '\n';
  std::cout << "metrics: " << res.metrics.to_json().dump(2) << '\n';
  if (res.abort) {
    std::cout << "ABORT at tick " << res.abort->tick << " (t = " << res.abort->t
              << " s): " << res.abort->reason << '\n';
    return kFail;
  }
  const bool ok = print_thresholds(imav::check_thresholds(res.metrics, cfg.thresholds));
  return ok && res.metrics.valid() ? kPass : kFail;
}

imav::ExperimentConfig config_of_log(const imav::FlightLog& log) {
  if (!log.metadata.contains("config")) {
    throw std::runtime_error("log has no metadata sidecar with the run configuration");
  }
  return imav::config_from_json(log.metadata.at("config"));
}

int cmd_replay(const std::string& path, const std::string& gains_file) {
  const imav::FlightLog log = imav::FlightLog::load(path);
  imav::ExperimentConfig cfg = config_of_log(log);
  std::optional<imav::EstimatorConfig> gains;
  if (!gains_file.empty()) {
    std::ifstream in(gains_file);
    if (!in) throw std::runtime_error("cannot open gains file: " + gains_file);
    Json j = Json::parse(in);
    if (!j.contains("estimator")) j = Json{{"estimator", j}};
    gains = imav::config_from_json(j, cfg).estimator;
  }
  const imav::TimeWindow w{cfg.metrics.window_start,
                           cfg.metrics.window_end < 0.0 ? INFINITY : cfg.metrics.window_end};
  const imav::ReplayResult r = imav::replay_estimator(log, gains, w);
  Json m = {{"att_rms_deg", r.metrics.att_rms_deg},
            {"rate_rms_dps", r.metrics.rate_rms_dps},
            {"pos_rms_cm", r.metrics.pos_rms_cm},
            {"vel_rms_cm_s", r.metrics.vel_rms_cm_s},
            {"drift_cm", r.metrics.drift_cm}};
  std::cout << "replay metrics: " << m.dump(2) << '\n';
  std::vector<imav::Threshold> est_ths;
  for (const auto& th : cfg.thresholds) {
    if (m.contains(th.metric)) est_ths.push_back(th);
  }
  return print_thresholds(imav::check_thresholds(r.metrics, est_ths)) ? kPass : kFail;
}

int cmd_report(const std::string& path) {
  const imav::FlightLog log = imav::FlightLog::load(path);
  const imav::ExperimentConfig cfg = config_of_log(log);
  const imav::MetricsReport m = imav::compute_metrics(log, cfg);
  std::cout << "run: " << cfg.name << " seed " << cfg.seed << " (" << imav::to_string(cfg.precision)
            << ")\nrows: " << log.rows.size() << "\nlog_hash: " << log.hash() << '\n';
  if (log.metadata.contains("config_hash")) {
    const std::string recorded = log.metadata.at("config_hash").get<std::string>();
    std::cout << "config_hash: " << recorded
              << (recorded == imav::config_hash(cfg) ? "" : " (MISMATCH with embedded config)")
              << '\n';
  }
  std::cout << "metrics: " << m.to_json().dump(2) << '\n';
  if (log.metadata.contains("abort") && !log.metadata.at("abort").is_null()) {
    std::cout << "ABORT: " << log.metadata.at("abort").dump() << '\n';
    return kFail;
  }
  return print_thresholds(imav::check_thresholds(m, cfg.thresholds)) && m.valid() ? kPass : kFail;
}

int cmd_compare(const std::string& source, std::optional<std::uint64_t> seed) {
  imav::ExperimentConfig cfg = imav::load_config(source);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  const imav::PrecisionDivergence d = imav::compare_precision_runs(cfg);
  std::cout << d.to_json().dump(2) << '\n';
  std::cout << (d.max_est_position_cm < 0.1 ? "PASS" : "FAIL")
            << " estimated position divergence < 0.1 cm\n";
  std::cout << (d.max_est_attitude_deg < 0.1 ? "PASS" : "FAIL")
            << " estimated attitude divergence < 0.1 deg\n";
  bool ok = d.max_est_position_cm < 0.1 && d.max_est_attitude_deg < 0.1;
  std::cout << "single-precision thresholds:\n";
  ok = print_thresholds(imav::check_thresholds(d.single_metrics, cfg.thresholds)) && ok;
  return ok ? kPass : kFail;
}

std::atomic<bool> g_interrupted{false};

int cmd_serve(const std::string& source, imav::telemetry::ServerConfig sc, bool live_only) {
  imav::ExperimentConfig cfg = imav::load_config(source);
  if (live_only) {
    cfg.mission.commands.clear();
    cfg.mission.command_file.clear();
  }
  imav::telemetry::TelemetryServer server(cfg, sc);
  server.start();
  std::cout << "serving " << cfg.name << " on " << sc.host << ':' << server.port()
            << " (protocol " << imav::telemetry::kProtocolVersion << ", config "
            << imav::config_hash(cfg) << ")" << std::endl;
  std::signal(SIGINT, [](int) { g_interrupted = true; });
  std::signal(SIGTERM, [](int) { g_interrupted = true; });
  while (!g_interrupted) {
    if (sc.autostart && server.status().finished) break;
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
  server.stop();
  if (!sc.record_path.empty()) std::cout << "command record: " << sc.record_path << '\n';
  return kPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Insect-scale aerial vehicle simulator"};
  app.require_subcommand(1);

  std::string source, log_path, gains_file, out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;

  auto* run = app.add_subcommand("run", "Run a preset or config file and check its thresholds");
  run->add_option("config", source, "Preset name or JSON config file")->required();
  run->add_option("--seed", seed, "Noise seed");
  run->add_option("--precision", precision, "single or double")
      ->check(CLI::IsMember({"single", "double"}));
  run->add_option("--out", out_dir, "Directory for the CSV log and its metadata");

  auto* replay = app.add_subcommand("replay", "Re-run only the estimator over a recorded log");
  replay->add_option("log", log_path, "Log CSV path")->required();
  replay->add_option("--gains", gains_file, "JSON file with estimator gains");

  auto* compare = app.add_subcommand("compare-precision", "Dual run in single and double precision");
  compare->add_option("config", source, "Preset name or JSON config file")->required();
  compare->add_option("--seed", seed, "Noise seed");

  auto* report = app.add_subcommand("report", "Recompute metrics from a recorded log");
  report->add_option("log", log_path, "Log CSV path")->required();

  imav::telemetry::ServerConfig sc;
  if (const char* h = std::getenv("IMAV_TELEMETRY_HOST")) sc.host = h;
  if (const char* p = std::getenv("IMAV_TELEMETRY_PORT")) sc.port = static_cast<std::uint16_t>(std::atoi(p));
  sc.port = sc.port ? sc.port : 8765;
  double factor = 1.0;
  bool headless = false, live_only = false;
  std::string serve_source = "mission30s";
  auto* serve = app.add_subcommand("serve", "Live session for the operator console");
  serve->add_option("config", serve_source, "Preset name or JSON config file");
  serve->add_option("--host", sc.host, "Listen address (env IMAV_TELEMETRY_HOST)");
  serve->add_option("--port", sc.port, "Listen port (env IMAV_TELEMETRY_PORT)");
  serve->add_option("--factor", factor, "Real-time factor")->check(CLI::PositiveNumber);
  serve->add_flag("--headless", headless, "Run unpaced");
  serve->add_option("--decimation", sc.decimation_hz, "State message rate, Hz");
  serve->add_option("--record", sc.record_path, "Command script written on stop and at run end");
  serve->add_option("--log", sc.log_stem, "Flight log stem written at run end");
  serve->add_flag("--autostart", sc.autostart, "Start without waiting for a start command");
  serve->add_flag("--live-only", live_only, "Drop scripted commands from the configuration");

  app.add_subcommand("presets", "List preset names");
  auto* show = app.add_subcommand("config", "Print the full JSON configuration");
  show->add_option("config", source, "Preset name or JSON config file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(source, seed, precision, out_dir);
    if (*replay) return cmd_replay(log_path, gains_file);
    if (*compare) return cmd_compare(source, seed);
    if (*report) return cmd_report(log_path);
    if (*serve) {
      sc.real_time_factor = headless ? std::nullopt : std::optional<double>(factor);
      return cmd_serve(serve_source, sc, live_only);
    }
    if (app.got_subcommand("presets")) {
      for (const auto& n : imav::preset_names()) std::cout << n << '\n';
      return kPass;
    }
    if (*show) {
      std::cout << imav::to_json(imav::load_config(source)).dump(2) << '\n';
      return kPass;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
