#pragma once

// Deterministic fixed-step closed loop: truth dynamics -> sensors -> estimator
// -> mission setpoint -> controller, one log row per control tick.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "imav/config.hpp"
#include "imav/controller.hpp"
#include "imav/estimator.hpp"
#include "imav/flight_log.hpp"
#include "imav/metrics.hpp"
#include "imav/mission.hpp"
#include "imav/sensors.hpp"
#include "imav/vehicle.hpp"

namespace imav {

struct RunAbort {
  std::size_t tick{0};
  double t{0.0};
  std::string reason;
};

struct MissionOutcome {
  Vec3<double> start{};                // truth position at t = 0
  bool landing_started{false};
  double landing_start_t{0.0};
  std::optional<double> touchdown_t;
  Vec3<double> touchdown{};
  double target_x{0.0}, target_y{0.0};
};

/// Applied high-level command as seen at a tick boundary.
struct CommandEvent {
  double t{0.0};
  CommandStatus status{CommandStatus::Applied};
  HighLevelCommand applied;    // after clamping
  HighLevelCommand requested;  // as released by the rate limiter
  std::size_t coalesced{1};
};

namespace detail {

inline Vec3<double> draw_turn_on_bias(const ExperimentConfig& cfg) {
  if (cfg.calibration.bias_std <= 0.0) return cfg.noise.gyro_bias;
  GaussianStream s(mix_seed(cfg.seed ^ 0x4444));
  return cfg.noise.gyro_bias + s.vec3(cfg.calibration.bias_std);
}

// Mean of stationary gyro samples: the pre-flight bias estimate.
inline Vec3<double> calibrate_gyro(const ExperimentConfig& cfg, const Vec3<double>& true_bias) {
  const int n = cfg.calibration.samples;
  if (n <= 0) return {};
  GaussianStream s(mix_seed(cfg.seed ^ 0x5555));
  const double sigma = cfg.noise.gyro_noise_density * std::sqrt(cfg.rates.imu);
  CompensatedSum sx, sy, sz;
  for (int i = 0; i < n; ++i) {
    const Vec3<double> g = true_bias + (sigma > 0.0 ? s.vec3(sigma) : Vec3<double>{});
    sx.add(g.x);
    sy.add(g.y);
    sz.add(g.z);
  }
  return Vec3<double>{sx.value(), sy.value(), sz.value()} / static_cast<double>(n);
}

}  // namespace detail

template <typename T>
class Simulation {
 public:
  explicit Simulation(ExperimentConfig cfg)
      : cfg_(std::move(cfg)),
        terrain_(cfg_.make_terrain()),
        scheduler_(cfg_.rates),
        sensors_(make_noise(), cfg_.rates, cfg_.geometry, cfg_.vehicle.flap_frequency),
        controller_(cfg_.controller, cfg_.vehicle),
        tracker_(MissionSetpoint{}, cfg_.mission.limits),
        limiter_(cfg_.mission.limits) {
    cfg_.validate();
    sensors_.set_gravity(cfg_.vehicle.gravity);
    cfg_.estimator.mass = cfg_.vehicle.mass;
    cfg_.estimator.gravity = cfg_.vehicle.gravity;
    cfg_.estimator.flow_focal_scale = cfg_.noise.flow_focal_scale;
    cfg_.estimator.imu_rate = cfg_.rates.imu;
    cfg_.estimator.flow_rate = cfg_.rates.flow;

    const auto& ic = cfg_.initial;
    truth_.position = {ic.position.x, ic.position.y,
                       terrain_.height(ic.position.x, ic.position.y) + (ic.on_ground ? 0.0 : ic.position.z)};
    truth_.orientation = Quat<double>::from_yaw(ic.yaw);
    truth_.landed = ic.on_ground;
    outcome_.start = truth_.position;
    // An airborne start is a hover already in progress.
    if (!ic.on_ground) last_cmd_.thrust = cfg_.vehicle.mass * cfg_.vehicle.gravity;

    init_.q = truth_.orientation;
    init_.position = {ic.position.x, ic.position.y, ic.on_ground ? 0.0 : ic.position.z};
    init_.gyro_bias = detail::calibrate_gyro(cfg_, true_bias_);
    est_ = initial_estimate<T>(cfg_.estimator, init_, 0.0);

    MissionSetpoint sp;
    sp.position = init_.position;
    sp.yaw = ic.yaw;
    tracker_.snap_to(sp);
    if (cfg_.mission.enabled && ic.on_ground) {
      sp.position.z = cfg_.mission.takeoff_height;
      tracker_.set_target(sp);
    }
    if (cfg_.mission.enabled) {
      script_.assign(cfg_.mission.commands.begin(), cfg_.mission.commands.end());
      if (!cfg_.mission.command_file.empty()) {
        for (const auto& c : load_command_script(cfg_.mission.command_file)) script_.push_back(c);
      }
      std::stable_sort(script_.begin(), script_.end(),
                       [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; });
      outcome_.target_x = cfg_.mission.landing.target_x;
      outcome_.target_y = cfg_.mission.landing.target_y;
    }
    total_ticks_ = static_cast<std::size_t>(std::llround(cfg_.duration * cfg_.rates.base));
    log_.rows.reserve(total_ticks_);
  }

  bool done() const { return abort_.has_value() || tick_ >= total_ticks_; }
  double time() const { return static_cast<double>(tick_) / cfg_.rates.base; }
  double dt() const { return 1.0 / cfg_.rates.base; }

  /// Queues an operator command; it is applied at the next tick boundary the
  /// rate limiter allows. Ignored once the landing has started.
  void submit_command(HighLevelCommand cmd) {
    cmd.timestamp = time();
    live_.push_back(cmd);
  }

  /// Runs to completion (or abort).
  void run() {
    while (!done()) step();
  }

  void step() {
    if (done()) return;
    const double t = time();
    const double dt = this->dt();
    LogRow row;
    row.t = t;

    // High-level commands at the tick boundary.
    std::optional<CommandEvent> event;
    if (cfg_.mission.enabled) event = release_commands(t);

    // Sensors sample the truth at t.
    const DueSensors due = scheduler_.due(t);
    SensorFrame frame;
    frame.time = t;
    const Vec3<double> accel =
        truth_.landed ? Vec3<double>{} : world_acceleration(truth_, last_cmd_, cfg_.vehicle);
    const double thrust_fraction = last_cmd_.thrust / cfg_.vehicle.max_total_thrust();
    if (due.imu) frame.imu = sensors_.sample_imu(truth_, accel, t, thrust_fraction);
    if (due.tof) frame.tof = sensors_.sample_tof(truth_, terrain_, t);
    if (due.flow) frame.flow = sensors_.sample_flow(truth_, terrain_, t);

    est_ = estimator_tick(est_, frame, static_cast<T>(last_cmd_.thrust), t, cfg_.estimator);

    const MissionSetpoint sp = next_setpoint(t, dt);

    ControlCommand cmd;
    if (landing_complete_) {
      cmd.timestamp = t;
    } else {
      T offset = T(0);
      if (sp.mode == AltitudeMode::Absolute) {
        offset = T(terrain_.height(double(est_.lateral.x_hat), double(est_.lateral.y_hat)));
      }
      cmd = controller_.tick(ControlInput<T>::from(est_, offset), sp, T(dt), t);
    }

    fill_row(row, frame, sp, cmd, event);
    log_.rows.push_back(row);
    if (sink_) sink_->push(row);

    if (!detail::finite_input(ControlInput<T>::from(est_))) {
      abort_ = RunAbort{tick_, t, "non-finite state estimate"};
      return;
    }
    try {
      truth_ = step_dynamics(truth_, cmd, cfg_.vehicle, dt);
    } catch (const std::exception& e) {
      abort_ = RunAbort{tick_, t, e.what()};
      return;
    }
    truth_.time = static_cast<double>(tick_ + 1) / cfg_.rates.base;
    const bool was_landed = truth_.landed;
    truth_ = resolve_ground_contact(truth_, terrain_);
    if (outcome_.landing_started && !was_landed && truth_.landed && !outcome_.touchdown_t) {
      outcome_.touchdown_t = truth_.time;
      outcome_.touchdown = truth_.position;
      landing_complete_ = true;
    }
    last_cmd_ = cmd;
    ++tick_;
  }

  /// Streams rows to `out` through a buffer of `capacity` rows.
  void attach_sink(std::ostream& out, std::size_t capacity = BufferedLogSink::kDefaultCapacity) {
    sink_.emplace(out, capacity);
  }
  void flush_sink() {
    if (sink_) sink_->flush();
  }

  /// Log with its metadata sidecar filled in.
  FlightLog& finish_log() {
    log_.metadata = metadata();
    return log_;
  }

  nlohmann::json metadata() const {
    nlohmann::json m;
    m["software_version"] = kSoftwareVersion;
    m["config_hash"] = config_hash(cfg_);
    m["seed"] = cfg_.seed;
    m["precision"] = to_string(precision());
    m["config"] = to_json(cfg_);
    m["base_rate"] = cfg_.rates.base;
    m["rows"] = log_.rows.size();
    m["columns"] = log_header();
    m["true_gyro_bias"] = vec_json(true_bias_);
    m["estimator_init"] = {{"q", {init_.q.w, init_.q.x, init_.q.y, init_.q.z}},
                           {"position", vec_json(init_.position)},
                           {"velocity", vec_json(init_.velocity)},
                           {"gyro_bias", vec_json(init_.gyro_bias)}};
    if (abort_) {
      m["abort"] = {{"tick", abort_->tick}, {"t", abort_->t}, {"reason", abort_->reason}};
    } else {
      m["abort"] = nullptr;
    }
    if (cfg_.mission.enabled) {
      nlohmann::json mo = {{"start", vec_json(outcome_.start)},
                           {"landing_started", outcome_.landing_started},
                           {"target", {outcome_.target_x, outcome_.target_y}}};
      if (outcome_.touchdown_t) {
        mo["touchdown_t"] = *outcome_.touchdown_t;
        mo["touchdown"] = vec_json(outcome_.touchdown);
      }
      m["mission"] = mo;
    }
    return m;
  }

  static constexpr Precision precision() {
    return std::is_same_v<T, float> ? Precision::Single : Precision::Double;
  }

  const ExperimentConfig& config() const { return cfg_; }
  const VehicleState& truth() const { return truth_; }
  const EstimatedState<T>& estimate() const { return est_; }
  const MissionSetpoint& setpoint() const { return last_sp_; }
  const ControlCommand& last_command() const { return last_cmd_; }
  const FlightLog& log() const { return log_; }
  const TerrainField& terrain() const { return terrain_; }
  const MissionOutcome& outcome() const { return outcome_; }
  const std::optional<RunAbort>& aborted() const { return abort_; }
  const std::vector<CommandEvent>& command_events() const { return events_; }

  /// Released commands stamped with their tick time. Written as a command
  /// script and replayed with no other commands, it reproduces this run.
  std::vector<HighLevelCommand> command_record() const {
    std::vector<HighLevelCommand> out;
    out.reserve(events_.size());
    for (const auto& e : events_) {
      HighLevelCommand c = e.requested;
      c.timestamp = e.t;
      c.source = CommandSource::Scripted;
      out.push_back(c);
    }
    return out;
  }
  const EstimatorInit& estimator_init() const { return init_; }
  std::size_t tick() const { return tick_; }
  std::size_t total_ticks() const { return total_ticks_; }
  bool landing_complete() const { return landing_complete_; }
  const ControllerState<T>& controller_state() const { return controller_.state(); }

 private:
  NoiseConfig make_noise() {
    true_bias_ = detail::draw_turn_on_bias(cfg_);
    NoiseConfig n = cfg_.noise;
    n.gyro_bias = true_bias_;
    n.rng_seed = cfg_.seed;
    return n;
  }

  std::optional<CommandEvent> release_commands(double t) {
    while (next_script_ < script_.size() && script_[next_script_].timestamp <= t + 1e-9) {
      if (!outcome_.landing_started) limiter_.submit(script_[next_script_]);
      ++next_script_;
    }
    for (const auto& c : live_) {
      if (!outcome_.landing_started) limiter_.submit(c);
    }
    live_.clear();
    auto released = limiter_.poll(t);
    if (!released) return std::nullopt;
    CommandResult r = tracker_.command(*released);
    CommandEvent ev{t, r.status, r.applied, *released, limiter_.last_coalesced_count()};
    events_.push_back(ev);
    return ev;
  }

  MissionSetpoint next_setpoint(double t, double dt) {
    MissionSetpoint sp;
    if (!cfg_.mission.enabled) {
      sp = trajectory_setpoint(cfg_.trajectory, std::min(t, cfg_.trajectory.duration));
    } else {
      const auto& land = cfg_.mission.landing;
      if (land.enabled && !outcome_.landing_started && t >= land.start_time) {
        outcome_.landing_started = true;
        outcome_.landing_start_t = t;
        lander_.emplace(tracker_.current(), land.target_x, land.target_y, land.params);
      }
      if (lander_) {
        sp = lander_->update(double(est_.lateral.x_hat), double(est_.lateral.y_hat), dt);
        tracker_.snap_to(sp);
      } else {
        sp = tracker_.step(dt);
      }
    }
    last_sp_ = sp;
    return sp;
  }

  void fill_row(LogRow& r, const SensorFrame& f, const MissionSetpoint& sp,
                const ControlCommand& cmd, const std::optional<CommandEvent>& ev) const {
    const auto& s = truth_;
    r.true_x = s.position.x;
    r.true_y = s.position.y;
    r.true_z = s.position.z;
    r.true_vx = s.velocity.x;
    r.true_vy = s.velocity.y;
    r.true_vz = s.velocity.z;
    r.true_qw = s.orientation.w;
    r.true_qx = s.orientation.x;
    r.true_qy = s.orientation.y;
    r.true_qz = s.orientation.z;
    r.true_wx = s.body_rates.x;
    r.true_wy = s.body_rates.y;
    r.true_wz = s.body_rates.z;
    r.true_landed = s.landed ? 1.0 : 0.0;
    r.terrain_h = terrain_.height(s.position.x, s.position.y);
    if (f.imu) {
      r.imu_present = 1;
      r.imu_t = f.imu->timestamp;
      r.gyro_x = f.imu->gyro.x;
      r.gyro_y = f.imu->gyro.y;
      r.gyro_z = f.imu->gyro.z;
      r.acc_x = f.imu->accel.x;
      r.acc_y = f.imu->accel.y;
      r.acc_z = f.imu->accel.z;
    }
    if (f.tof) {
      r.tof_present = 1;
      r.tof_valid = f.tof->valid ? 1 : 0;
      r.tof_t = f.tof->timestamp;
      r.tof_d = f.tof->distance;
    }
    if (f.flow) {
      r.flow_present = 1;
      r.flow_t = f.flow->timestamp;
      r.flow_x = f.flow->flow[0];
      r.flow_y = f.flow->flow[1];
      r.flow_q = f.flow->quality;
    }
    fill_estimate(r, est_);
    r.sp_x = sp.position.x;
    r.sp_y = sp.position.y;
    r.sp_z = sp.position.z;
    r.sp_yaw = sp.yaw;
    r.sp_mode = sp.mode == AltitudeMode::Absolute ? 1.0 : 0.0;
    r.cmd_thrust = cmd.thrust;
    r.cmd_tx = cmd.torque.x;
    r.cmd_ty = cmd.torque.y;
    r.cmd_tz = cmd.torque.z;
    if (ev) {
      r.hl_event = ev->status == CommandStatus::Applied ? 1.0 : 2.0;
      r.hl_dx = ev->applied.delta.x;
      r.hl_dy = ev->applied.delta.y;
      r.hl_dz = ev->applied.delta.z;
      r.hl_dyaw = ev->applied.yaw_delta;
    }
    r.fault = controller_.state().fault ? 1.0 : 0.0;
  }

 public:
  static void fill_estimate(LogRow& r, const EstimatedState<T>& e) {
    r.est_qw = double(e.attitude.q_hat.w);
    r.est_qx = double(e.attitude.q_hat.x);
    r.est_qy = double(e.attitude.q_hat.y);
    r.est_qz = double(e.attitude.q_hat.z);
    r.est_wx = double(e.attitude.omega_hat.x);
    r.est_wy = double(e.attitude.omega_hat.y);
    r.est_wz = double(e.attitude.omega_hat.z);
    r.est_bx = double(e.attitude.b_hat.x);
    r.est_by = double(e.attitude.b_hat.y);
    r.est_bz = double(e.attitude.b_hat.z);
    r.est_z = double(e.altitude.z_hat);
    r.est_vz = double(e.altitude.vz_hat);
    r.est_x = double(e.lateral.x_hat);
    r.est_y = double(e.lateral.y_hat);
    r.est_vx = double(e.lateral.vx_hat);
    r.est_vy = double(e.lateral.vy_hat);
    r.est_ex = double(e.lateral.ex_hat);
    r.est_ey = double(e.lateral.ey_hat);
    r.alt_p00 = double(e.altitude.cov.m00);
    r.alt_p01 = double(e.altitude.cov.m01);
    r.alt_p11 = double(e.altitude.cov.m11);
    r.latx_p00 = double(e.lateral.cov_x.m00);
    r.latx_p01 = double(e.lateral.cov_x.m01);
    r.latx_p11 = double(e.lateral.cov_x.m11);
    r.laty_p00 = double(e.lateral.cov_y.m00);
    r.laty_p01 = double(e.lateral.cov_y.m01);
    r.laty_p11 = double(e.lateral.cov_y.m11);
    r.thrust_in = double(e.thrust_in);
  }

 private:
  ExperimentConfig cfg_;
  TerrainField terrain_;
  Vec3<double> true_bias_{};
  SensorScheduler scheduler_;
  SensorSuite sensors_;
  FlightController<T> controller_;
  SetpointTracker tracker_;
  CommandRateLimiter limiter_;
  std::optional<LandingController> lander_;
  std::vector<HighLevelCommand> script_;
  std::size_t next_script_{0};
  std::vector<HighLevelCommand> live_;
  std::vector<CommandEvent> events_;

  VehicleState truth_{};
  EstimatorInit init_{};
  EstimatedState<T> est_{};
  ControlCommand last_cmd_{};
  MissionSetpoint last_sp_{};
  MissionOutcome outcome_{};
  bool landing_complete_{false};

  FlightLog log_;
  std::optional<BufferedLogSink> sink_;
  std::size_t tick_{0};
  std::size_t total_ticks_{0};
  std::optional<RunAbort> abort_;
};

// ---------------------------------------------------------------------------
// Metrics

namespace detail {

inline double row_height(const LogRow& r) { return r.true_z - r.terrain_h; }

inline Quat<double> true_q(const LogRow& r) { return {r.true_qw, r.true_qx, r.true_qy, r.true_qz}; }
inline Quat<double> est_q(const LogRow& r) { return {r.est_qw, r.est_qx, r.est_qy, r.est_qz}; }

}  // namespace detail

/// Estimation-error metrics (attitude, rate, position, velocity, drift)
/// against truth over the window.
inline void estimation_metrics(const std::vector<LogRow>& rows, TimeWindow w, MetricsReport& m) {
  std::vector<double> att, rate, pos, vel;
  for (const auto& r : rows) {
    if (r.t < w.start || r.t > w.end) continue;
    att.push_back(rad2deg(Quat<double>::angle_between(detail::true_q(r), detail::est_q(r))));
    const Vec3<double> dw{r.est_wx - r.true_wx, r.est_wy - r.true_wy, r.est_wz - r.true_wz};
    rate.push_back(rad2deg(dw.norm()));
    const Vec3<double> dp{r.est_x - r.true_x, r.est_y - r.true_y, r.est_z - detail::row_height(r)};
    pos.push_back(dp.norm() * 100.0);
    const Vec3<double> dv{r.est_vx - r.true_vx, r.est_vy - r.true_vy, r.est_vz - r.true_vz};
    vel.push_back(dv.norm() * 100.0);
  }
  m.att_rms_deg = rms(att);
  m.rate_rms_dps = rms(rate);
  m.pos_rms_cm = rms(pos);
  m.vel_rms_cm_s = rms(vel);
  if (!rows.empty()) {
    const auto& last = rows.back();
    m.drift_cm = std::hypot(last.est_x - last.true_x, last.est_y - last.true_y) * 100.0;
  }
}

inline MetricsReport compute_metrics(const FlightLog& log, const ExperimentConfig& cfg) {
  MetricsReport m;
  if (log.rows.empty()) return m;
  TimeWindow w{cfg.metrics.window_start,
               cfg.metrics.window_end < 0.0 ? INFINITY : cfg.metrics.window_end};
  TimedSeries truth, sp;
  truth.reserve(log.rows.size());
  sp.reserve(log.rows.size());
  for (const auto& r : log.rows) {
    const double z = r.sp_mode > 0.5 ? r.true_z : detail::row_height(r);
    truth.push_back({r.t, {r.true_x, r.true_y, z}});
    sp.push_back({r.t, {r.sp_x, r.sp_y, r.sp_z}});
    if (r.t >= w.start && r.t <= w.end) {
      const double speed = std::sqrt(r.true_vx * r.true_vx + r.true_vy * r.true_vy +
                                     r.true_vz * r.true_vz);
      m.max_speed_cm_s = std::max(m.max_speed_cm_s, speed * 100.0);
    }
  }
  const RmsResult track = compute_rms(truth, sp, w);
  m.lateral_rms_cm = track.lateral * 100.0;
  m.altitude_rms_cm = track.altitude * 100.0;
  estimation_metrics(log.rows, w, m);

  if (cfg.mission.enabled) {
    const auto& meta = log.metadata;
    if (cfg.metrics.terrain_region) {
      double worst = 0.0;
      for (const auto& r : log.rows) {
        if (r.true_landed > 0.5 || r.sp_mode > 0.5) continue;
        if (std::hypot(r.true_x - cfg.metrics.region_cx, r.true_y - cfg.metrics.region_cy) >
            cfg.metrics.region_radius) {
          continue;
        }
        worst = std::max(worst, std::abs(detail::row_height(r) - r.sp_z));
      }
      m.terrain_height_error_max_cm = worst * 100.0;
    }
    if (meta.contains("mission")) {
      const auto& mo = meta.at("mission");
      const Vec3<double> start = vec_from(mo.at("start"));
      Vec3<double> end{log.rows.back().true_x, log.rows.back().true_y, log.rows.back().true_z};
      if (mo.contains("touchdown_t")) {
        end = vec_from(mo.at("touchdown"));
        m.touchdown_time_s = mo.at("touchdown_t").get<double>();
        const double tx = mo.at("target")[0].get<double>();
        const double ty = mo.at("target")[1].get<double>();
        m.touchdown_error_cm = std::hypot(end.x - tx, end.y - ty) * 100.0;
      }
      m.course_length_m = std::hypot(end.x - start.x, end.y - start.y);
    }
  }
  return m;
}

struct ThresholdResult {
  std::string metric;
  std::optional<double> value;
  std::optional<double> max, min;
  bool pass{false};
};

inline std::vector<ThresholdResult> check_thresholds(const MetricsReport& m,
                                                     const std::vector<Threshold>& ths) {
  std::vector<ThresholdResult> out;
  for (const auto& th : ths) {
    ThresholdResult r{th.metric, m.get(th.metric), th.max, th.min, false};
    if (r.value && std::isfinite(*r.value)) {
      r.pass = (!th.max || *r.value <= *th.max) && (!th.min || *r.value >= *th.min);
    }
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Runners

struct ExperimentResult {
  FlightLog log;
  MetricsReport metrics;
  std::optional<RunAbort> abort;
};

template <typename T>
ExperimentResult run_experiment_as(const ExperimentConfig& cfg) {
  Simulation<T> sim(cfg);
  sim.run();
  ExperimentResult res;
  res.abort = sim.aborted();
  res.log = std::move(sim.finish_log());
  res.metrics = compute_metrics(res.log, cfg);
  return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
  return cfg.precision == Precision::Single ? run_experiment_as<float>(cfg)
                                            : run_experiment_as<double>(cfg);
}

/// Precision selection for a steppable run: fixed once the first tick executes.
class ExperimentRunner {
 public:
  explicit ExperimentRunner(ExperimentConfig cfg) : cfg_(std::move(cfg)) { rebuild(); }

  void set_precision_mode(Precision p) {
    if (started_) throw std::logic_error("precision mode cannot change after the run starts");
    cfg_.precision = p;
    rebuild();
  }
  Precision precision_mode() const { return cfg_.precision; }

  void step() {
    started_ = true;
    std::visit([](auto& s) { s.step(); }, sim_);
  }
  void run() {
    started_ = true;
    std::visit([](auto& s) { s.run(); }, sim_);
  }
  bool done() const {
    return std::visit([](const auto& s) { return s.done(); }, sim_);
  }
  void submit_command(const HighLevelCommand& c) {
    std::visit([&](auto& s) { s.submit_command(c); }, sim_);
  }
  ExperimentResult result() {
    ExperimentResult r;
    std::visit(
        [&](auto& s) {
          r.abort = s.aborted();
          r.log = s.finish_log();
        },
        sim_);
    r.metrics = compute_metrics(r.log, cfg_);
    return r;
  }

  template <typename F>
  decltype(auto) visit(F&& f) {
    return std::visit(std::forward<F>(f), sim_);
  }
  template <typename F>
  decltype(auto) visit(F&& f) const {
    return std::visit(std::forward<F>(f), sim_);
  }
  const ExperimentConfig& config() const { return cfg_; }

 private:
  void rebuild() {
    if (cfg_.precision == Precision::Single) {
      sim_.template emplace<Simulation<float>>(cfg_);
    } else {
      sim_.template emplace<Simulation<double>>(cfg_);
    }
  }

  ExperimentConfig cfg_;
  std::variant<Simulation<double>, Simulation<float>> sim_{std::in_place_type<Simulation<double>>,
                                                           ExperimentConfig{}};
  bool started_{false};
};

struct PrecisionDivergence {
  double max_est_position_cm{0.0};
  double rms_est_position_cm{0.0};
  double max_est_attitude_deg{0.0};
  double max_true_position_cm{0.0};
  double max_true_attitude_deg{0.0};
  double max_thrust_n{0.0};
  double rms_thrust_n{0.0};
  std::size_t ticks{0};
  MetricsReport double_metrics, single_metrics;

  nlohmann::json to_json() const {
    return {{"max_est_position_cm", max_est_position_cm},
            {"rms_est_position_cm", rms_est_position_cm},
            {"max_est_attitude_deg", max_est_attitude_deg},
            {"max_true_position_cm", max_true_position_cm},
            {"max_true_attitude_deg", max_true_attitude_deg},
            {"max_thrust_n", max_thrust_n},
            {"rms_thrust_n", rms_thrust_n},
            {"ticks", ticks},
            {"double", double_metrics.to_json()},
            {"single", single_metrics.to_json()}};
  }
};

/// Runs the experiment in both precisions with the same seed and compares.
inline PrecisionDivergence compare_precision_runs(ExperimentConfig cfg) {
  cfg.precision = Precision::Double;
  const ExperimentResult d = run_experiment(cfg);
  cfg.precision = Precision::Single;
  const ExperimentResult s = run_experiment(cfg);
  PrecisionDivergence out;
  out.double_metrics = d.metrics;
  out.single_metrics = s.metrics;
  const std::size_t n = std::min(d.log.rows.size(), s.log.rows.size());
  out.ticks = n;
  std::vector<double> pos, thrust;
  for (std::size_t i = 0; i < n; ++i) {
    const LogRow& a = d.log.rows[i];
    const LogRow& b = s.log.rows[i];
    const double ep =
        Vec3<double>{a.est_x - b.est_x, a.est_y - b.est_y, a.est_z - b.est_z}.norm() * 100.0;
    pos.push_back(ep);
    out.max_est_position_cm = std::max(out.max_est_position_cm, ep);
    out.max_est_attitude_deg =
        std::max(out.max_est_attitude_deg,
                 rad2deg(Quat<double>::angle_between(detail::est_q(a), detail::est_q(b))));
    out.max_true_position_cm = std::max(
        out.max_true_position_cm,
        Vec3<double>{a.true_x - b.true_x, a.true_y - b.true_y, a.true_z - b.true_z}.norm() * 100.0);
    out.max_true_attitude_deg =
        std::max(out.max_true_attitude_deg,
                 rad2deg(Quat<double>::angle_between(detail::true_q(a), detail::true_q(b))));
    const double df = std::abs(a.cmd_thrust - b.cmd_thrust);
    thrust.push_back(df);
    out.max_thrust_n = std::max(out.max_thrust_n, df);
  }
  out.rms_est_position_cm = rms(pos);
  out.rms_thrust_n = rms(thrust);
  return out;
}

// ---------------------------------------------------------------------------
// Estimator replay

inline EstimatorInit estimator_init_from(const nlohmann::json& meta) {
  if (!meta.contains("estimator_init")) {
    throw std::runtime_error("log metadata lacks the initial estimator state");
  }
  const auto& j = meta.at("estimator_init");
  EstimatorInit init;
  const auto& q = j.at("q");
  init.q = {q[0].get<double>(), q[1].get<double>(), q[2].get<double>(), q[3].get<double>()};
  init.position = vec_from(j.at("position"));
  init.velocity = vec_from(j.at("velocity"));
  init.gyro_bias = vec_from(j.at("gyro_bias"));
  return init;
}

inline SensorFrame frame_from_row(const LogRow& r) {
  SensorFrame f;
  f.time = r.t;
  if (r.imu_present > 0.5) {
    f.imu = ImuSample{r.imu_t, {r.gyro_x, r.gyro_y, r.gyro_z}, {r.acc_x, r.acc_y, r.acc_z}};
  }
  if (r.tof_present > 0.5) f.tof = TofSample{r.tof_t, r.tof_d, r.tof_valid > 0.5};
  if (r.flow_present > 0.5) f.flow = FlowSample{r.flow_t, {r.flow_x, r.flow_y}, r.flow_q};
  return f;
}

struct ReplayResult {
  std::vector<LogRow> rows;  // logged rows with the estimate columns recomputed
  MetricsReport metrics;     // estimation metrics only
};

template <typename T>
ReplayResult replay_estimator_as(const FlightLog& log, const EstimatorConfig& gains,
                                 const EstimatorInit& init, TimeWindow window) {
  bool any_sensor = false;
  for (const auto& r : log.rows) any_sensor = any_sensor || r.imu_present > 0.5;
  if (log.rows.empty() || !any_sensor) throw std::runtime_error("log has no raw sensor rows");
  ReplayResult out;
  out.rows = log.rows;
  EstimatedState<T> est = initial_estimate<T>(gains, init, 0.0);
  for (auto& r : out.rows) {
    est = estimator_tick(est, frame_from_row(r), static_cast<T>(r.thrust_in), r.t, gains);
    Simulation<T>::fill_estimate(r, est);
  }
  estimation_metrics(out.rows, window, out.metrics);
  return out;
}

/// Re-runs only the estimator over the recorded sensor streams. `gains`
/// defaults to the estimator configuration stored in the log metadata.
inline ReplayResult replay_estimator(const FlightLog& log,
                                     std::optional<EstimatorConfig> gains = std::nullopt,
                                     TimeWindow window = {}) {
  ExperimentConfig cfg;
  if (log.metadata.contains("config")) cfg = config_from_json(log.metadata.at("config"));
  EstimatorConfig g = gains ? *gains : cfg.estimator;
  g.mass = cfg.vehicle.mass;
  g.gravity = cfg.vehicle.gravity;
  g.flow_focal_scale = cfg.noise.flow_focal_scale;
  g.imu_rate = cfg.rates.imu;
  g.flow_rate = cfg.rates.flow;
  const EstimatorInit init = estimator_init_from(log.metadata);
  Precision p = Precision::Double;
  if (log.metadata.contains("precision")) p = parse_precision(log.metadata.at("precision"));
  return p == Precision::Single ? replay_estimator_as<float>(log, g, init, window)
                                : replay_estimator_as<double>(log, g, init, window);
}

}  // namespace imav
