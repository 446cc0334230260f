#pragma once

// Experiment configuration: JSON (de)serialization, validation with itemized
// errors, named presets and the configuration hash recorded in every log.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "imav/controller.hpp"
#include "imav/estimator.hpp"
#include "imav/mission.hpp"
#include "imav/sensors.hpp"
#include "imav/terrain.hpp"
#include "imav/vehicle.hpp"

namespace imav {

using Json = nlohmann::json;

inline constexpr const char* kSoftwareVersion = "1.0.0";

struct InitialCondition {
  Vec3<double> position{0.0, 0.0, 0.05};  // z is height above terrain
  double yaw{0.0};
  bool on_ground{false};
};

struct LandingConfig {
  bool enabled{false};
  double start_time{0.0};    // s after which the descent begins
  double target_x{0.0}, target_y{0.0};
  LandingParams params{};
};

/// Scripted flight: take off, apply timestamped high-level commands through the
/// rate limiter and slew tracker, optionally land.
struct MissionConfig {
  bool enabled{false};
  double takeoff_height{0.06};  // m above terrain
  std::vector<HighLevelCommand> commands;
  std::string command_file;     // loaded (and appended) when non-empty
  CommandLimits limits{};
  LandingConfig landing{};
};

struct MetricsConfig {
  double window_start{0.0};
  double window_end{-1.0};      // < 0 means end of run
  // Region where terrain-following error is evaluated (the curved obstacle).
  bool terrain_region{false};
  double region_cx{0.0}, region_cy{0.0}, region_radius{0.0};
};

struct Threshold {
  std::string metric;
  std::optional<double> max;
  std::optional<double> min;
};

struct GyroCalibration {
  int samples{480};             // stationary pre-flight samples averaged into b_hat
  double bias_std{0.01};        // rad/s, per-seed turn-on bias spread
};

struct ExperimentConfig {
  std::string name{"custom"};
  double duration{12.0};
  std::uint64_t seed{1};
  Precision precision{Precision::Double};

  VehicleParams vehicle{};
  NoiseConfig noise{};
  SensorRates rates{};
  SensorGeometry geometry{};
  GyroCalibration calibration{};
  EstimatorConfig estimator{};
  ControllerGains controller{};

  std::vector<TerrainPrimitive> terrain{FlatPlane{}};
  TerrainBounds terrain_bounds{};

  InitialCondition initial{};
  TrajectoryParams trajectory{};
  MissionConfig mission{};
  MetricsConfig metrics{};
  std::vector<Threshold> thresholds;

  TerrainField make_terrain() const { return TerrainField(terrain, terrain_bounds); }

  /// Empty when valid; otherwise one message per problem.
  std::vector<std::string> validation_errors() const {
    std::vector<std::string> errs;
    auto check = [&](auto&& fn) {
      try {
        fn();
      } catch (const std::exception& e) {
        errs.emplace_back(e.what());
      }
    };
    if (!(duration >= 0.0) || !std::isfinite(duration)) errs.emplace_back("duration must be >= 0");
    check([&] { vehicle.validate(); });
    check([&] { noise.validate(); });
    check([&] { rates.validate(); });
    check([&] { controller.validate(); });
    check([&] { trajectory.validate(); });
    check([&] { make_terrain(); });
    if (std::abs(rates.base - 480.0) > 0.0 && rates.base > 480.0) {
      errs.emplace_back("base rate above 480 Hz exceeds the dynamics step bound");
    }
    if (calibration.samples < 0 || calibration.bias_std < 0) {
      errs.emplace_back("gyro calibration settings must be nonnegative");
    }
    if (estimator.kp < 0 || estimator.ki < 0) errs.emplace_back("Mahony gains must be nonnegative");
    if (!(estimator.q_accel > 0) || !(estimator.r_z > 0) || !(estimator.q_acc_lat > 0) ||
        !(estimator.r_flow > 0) || !(estimator.flow_err_tau > 0)) {
      errs.emplace_back("filter noise parameters must be positive");
    }
    if (mission.enabled) {
      if (!(mission.limits.max_rate > 0) || !(mission.limits.max_step >= 0) ||
          !(mission.limits.slew_rate > 0)) {
        errs.emplace_back("command limits must be positive");
      }
      if (mission.landing.enabled && !(mission.landing.params.descent_rate > 0)) {
        errs.emplace_back("landing descent rate must be positive");
      }
    }
    for (const auto& th : thresholds) {
      if (!th.max && !th.min) errs.emplace_back("threshold '" + th.metric + "' has no bound");
    }
    return errs;
  }

  void validate() const {
    const auto errs = validation_errors();
    if (errs.empty()) return;
    std::string msg = "invalid experiment config:";
    for (const auto& e : errs) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
};

// ---------------------------------------------------------------------------
// JSON

inline Json vec_json(const Vec3<double>& v) { return Json::array({v.x, v.y, v.z}); }
inline Vec3<double> vec_from(const Json& j) {
  if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

namespace detail {

template <typename V>
void read_opt(const Json& j, const char* key, V& out) {
  if (!j.contains(key)) return;
  if constexpr (std::is_same_v<V, Vec3<double>>) {
    out = vec_from(j.at(key));
  } else {
    out = j.at(key).get<V>();
  }
}

inline void reject_unknown(const Json& j, std::initializer_list<const char*> keys,
                           const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) throw std::invalid_argument(where + ": unknown key '" + it.key() + "'");
  }
}

inline Json mode_json(AltitudeMode m) {
  return m == AltitudeMode::Absolute ? "absolute" : "terrain";
}
inline AltitudeMode mode_from(const std::string& s) {
  if (s == "absolute") return AltitudeMode::Absolute;
  if (s == "terrain") return AltitudeMode::TerrainRelative;
  throw std::invalid_argument("unknown altitude mode: " + s);
}

}  // namespace detail

inline Json to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["duration"] = c.duration;
  j["seed"] = c.seed;
  j["precision"] = to_string(c.precision);

  const auto& v = c.vehicle;
  j["vehicle"] = {{"mass", v.mass},
                  {"inertia", vec_json(v.inertia)},
                  {"gravity", v.gravity},
                  {"thrust_to_weight", v.thrust_to_weight},
                  {"linear_drag", vec_json(v.linear_drag)},
                  {"flap_frequency", v.flap_frequency}};
  const auto& n = c.noise;
  j["noise"] = {{"gyro_noise_density", n.gyro_noise_density},
                {"gyro_bias", vec_json(n.gyro_bias)},
                {"accel_noise_density", n.accel_noise_density},
                {"vibration_amplitude", n.vibration_amplitude},
                {"tof_noise_std", n.tof_noise_std},
                {"flow_noise_std", n.flow_noise_std},
                {"flow_noise_ref_height", n.flow_noise_ref_height},
                {"flow_quantum", n.flow_quantum},
                {"flow_focal_scale", n.flow_focal_scale}};
  j["rates"] = {{"base", c.rates.base}, {"imu", c.rates.imu}, {"tof", c.rates.tof},
                {"flow", c.rates.flow}};
  const auto& g = c.geometry;
  j["geometry"] = {{"tof_max_range", g.tof_max_range},
                   {"tof_max_tilt", g.tof_max_tilt},
                   {"flow_min_height", g.flow_min_height},
                   {"flow_quality_height", g.flow_quality_height},
                   {"flow_quality_rate", g.flow_quality_rate}};
  j["calibration"] = {{"samples", c.calibration.samples}, {"bias_std", c.calibration.bias_std}};
  const auto& e = c.estimator;
  j["estimator"] = {{"kp", e.kp},
                    {"ki", e.ki},
                    {"bias_limit", e.bias_limit},
                    {"integrate_bias", e.integrate_bias},
                    {"accel_gate_low", e.accel_gate_low},
                    {"accel_gate_high", e.accel_gate_high},
                    {"q_accel", e.q_accel},
                    {"r_z", e.r_z},
                    {"alt_p0_z", e.alt_p0_z},
                    {"alt_p0_vz", e.alt_p0_vz},
                    {"cov_ceiling", e.cov_ceiling},
                    {"tof_max_tilt", e.tof_max_tilt},
                    {"tof_step_gate", e.tof_step_gate},
                    {"q_acc_lat", e.q_acc_lat},
                    {"q_flow_err", e.q_flow_err},
                    {"flow_err_tau", e.flow_err_tau},
                    {"r_flow", e.r_flow},
                    {"lat_p0_v", e.lat_p0_v},
                    {"lat_p0_e", e.lat_p0_e},
                    {"min_flow_height", e.min_flow_height},
                    {"mass", e.mass},
                    {"gravity", e.gravity},
                    {"drag_x", e.drag_x},
                    {"drag_y", e.drag_y},
                    {"flow_focal_scale", e.flow_focal_scale},
                    {"imu_rate", e.imu_rate},
                    {"flow_rate", e.flow_rate}};
  const auto& k = c.controller;
  j["controller"] = {{"pos_p", vec_json(k.pos_p)},
                     {"pos_d", vec_json(k.pos_d)},
                     {"alt_i", k.alt_i},
                     {"alt_i_limit", k.alt_i_limit},
                     {"att_p", vec_json(k.att_p)},
                     {"att_d", vec_json(k.att_d)},
                     {"max_tilt", k.max_tilt},
                     {"torque_limit", vec_json(k.torque_limit)},
                     {"min_vertical_accel", k.min_vertical_accel}};

  Json prims = Json::array();
  for (const auto& p : c.terrain) {
    std::visit(
        [&](const auto& prim) {
          using P = std::decay_t<decltype(prim)>;
          if constexpr (std::is_same_v<P, FlatPlane>) {
            prims.push_back({{"type", "flat"}, {"height", prim.height}});
          } else if constexpr (std::is_same_v<P, CurvedBump>) {
            prims.push_back({{"type", "bump"},
                             {"cx", prim.cx},
                             {"cy", prim.cy},
                             {"peak_height", prim.peak_height},
                             {"radius", prim.radius}});
          } else {
            prims.push_back({{"type", "flower"},
                             {"cx", prim.cx},
                             {"cy", prim.cy},
                             {"radius", prim.radius},
                             {"stem_height", prim.stem_height}});
          }
        },
        p);
  }
  const auto& b = c.terrain_bounds;
  j["terrain"] = {{"primitives", prims},
                  {"bounds", {b.x_min, b.x_max, b.y_min, b.y_max}}};

  j["initial"] = {{"position", vec_json(c.initial.position)},
                  {"yaw", c.initial.yaw},
                  {"on_ground", c.initial.on_ground}};
  const auto& t = c.trajectory;
  j["trajectory"] = {{"kind", to_string(t.kind)},
                     {"origin", vec_json(t.origin)},
                     {"duration", t.duration},
                     {"separation", t.separation},
                     {"switch_axis", vec_json(t.switch_axis)},
                     {"dwell", t.dwell},
                     {"transition", t.transition},
                     {"width", t.width},
                     {"height", t.height},
                     {"period", t.period},
                     {"diameter", t.diameter},
                     {"ramp", t.ramp}};

  const auto& m = c.mission;
  Json cmds = Json::array();
  for (const auto& hc : m.commands) {
    Json cj = {{"t", hc.timestamp}, {"delta", vec_json(hc.delta)}, {"yaw_delta", hc.yaw_delta}};
    if (hc.mode) cj["mode"] = detail::mode_json(*hc.mode);
    cmds.push_back(cj);
  }
  j["mission"] = {{"enabled", m.enabled},
                  {"takeoff_height", m.takeoff_height},
                  {"commands", cmds},
                  {"command_file", m.command_file},
                  {"limits",
                   {{"max_step", m.limits.max_step},
                    {"max_yaw_step", m.limits.max_yaw_step},
                    {"max_rate", m.limits.max_rate},
                    {"slew_rate", m.limits.slew_rate},
                    {"yaw_slew_rate", m.limits.yaw_slew_rate}}},
                  {"landing",
                   {{"enabled", m.landing.enabled},
                    {"start_time", m.landing.start_time},
                    {"target_x", m.landing.target_x},
                    {"target_y", m.landing.target_y},
                    {"descent_rate", m.landing.params.descent_rate},
                    {"max_lateral_error", m.landing.params.max_lateral_error},
                    {"overshoot", m.landing.params.overshoot}}}};
  const auto& mc = c.metrics;
  j["metrics"] = {{"window_start", mc.window_start},
                  {"window_end", mc.window_end},
                  {"terrain_region", mc.terrain_region},
                  {"region_cx", mc.region_cx},
                  {"region_cy", mc.region_cy},
                  {"region_radius", mc.region_radius}};
  Json ths = Json::array();
  for (const auto& th : c.thresholds) {
    Json tj = {{"metric", th.metric}};
    if (th.max) tj["max"] = *th.max;
    if (th.min) tj["min"] = *th.min;
    ths.push_back(tj);
  }
  j["thresholds"] = ths;
  return j;
}

/// Overlays `j` onto `base`; absent keys keep their base values, unknown keys
/// are errors.
inline ExperimentConfig config_from_json(const Json& j, ExperimentConfig c = {}) {
  using detail::read_opt;
  using detail::reject_unknown;
  reject_unknown(j,
                 {"name", "duration", "seed", "precision", "vehicle", "noise", "rates", "geometry",
                  "calibration", "estimator", "controller", "terrain", "initial", "trajectory",
                  "mission", "metrics", "thresholds", "preset"},
                 "config");
  read_opt(j, "name", c.name);
  read_opt(j, "duration", c.duration);
  read_opt(j, "seed", c.seed);
  if (j.contains("precision")) c.precision = parse_precision(j.at("precision").get<std::string>());

  if (j.contains("vehicle")) {
    const Json& v = j.at("vehicle");
    reject_unknown(v, {"mass", "inertia", "gravity", "thrust_to_weight", "linear_drag",
                       "flap_frequency"},
                   "vehicle");
    read_opt(v, "mass", c.vehicle.mass);
    read_opt(v, "inertia", c.vehicle.inertia);
    read_opt(v, "gravity", c.vehicle.gravity);
    read_opt(v, "thrust_to_weight", c.vehicle.thrust_to_weight);
    read_opt(v, "linear_drag", c.vehicle.linear_drag);
    read_opt(v, "flap_frequency", c.vehicle.flap_frequency);
  }
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    reject_unknown(n, {"gyro_noise_density", "gyro_bias", "accel_noise_density",
                       "vibration_amplitude", "tof_noise_std", "flow_noise_std",
                       "flow_noise_ref_height", "flow_quantum", "flow_focal_scale"},
                   "noise");
    read_opt(n, "gyro_noise_density", c.noise.gyro_noise_density);
    read_opt(n, "gyro_bias", c.noise.gyro_bias);
    read_opt(n, "accel_noise_density", c.noise.accel_noise_density);
    read_opt(n, "vibration_amplitude", c.noise.vibration_amplitude);
    read_opt(n, "tof_noise_std", c.noise.tof_noise_std);
    read_opt(n, "flow_noise_std", c.noise.flow_noise_std);
    read_opt(n, "flow_noise_ref_height", c.noise.flow_noise_ref_height);
    read_opt(n, "flow_quantum", c.noise.flow_quantum);
    read_opt(n, "flow_focal_scale", c.noise.flow_focal_scale);
  }
  if (j.contains("rates")) {
    const Json& r = j.at("rates");
    reject_unknown(r, {"base", "imu", "tof", "flow"}, "rates");
    read_opt(r, "base", c.rates.base);
    read_opt(r, "imu", c.rates.imu);
    read_opt(r, "tof", c.rates.tof);
    read_opt(r, "flow", c.rates.flow);
  }
  if (j.contains("geometry")) {
    const Json& g = j.at("geometry");
    reject_unknown(g, {"tof_max_range", "tof_max_tilt", "flow_min_height", "flow_quality_height",
                       "flow_quality_rate"},
                   "geometry");
    read_opt(g, "tof_max_range", c.geometry.tof_max_range);
    read_opt(g, "tof_max_tilt", c.geometry.tof_max_tilt);
    read_opt(g, "flow_min_height", c.geometry.flow_min_height);
    read_opt(g, "flow_quality_height", c.geometry.flow_quality_height);
    read_opt(g, "flow_quality_rate", c.geometry.flow_quality_rate);
  }
  if (j.contains("calibration")) {
    const Json& g = j.at("calibration");
    reject_unknown(g, {"samples", "bias_std"}, "calibration");
    read_opt(g, "samples", c.calibration.samples);
    read_opt(g, "bias_std", c.calibration.bias_std);
  }
  if (j.contains("estimator")) {
    const Json& e = j.at("estimator");
    reject_unknown(e, {"kp", "ki", "bias_limit", "integrate_bias", "accel_gate_low",
                       "accel_gate_high", "q_accel", "r_z", "alt_p0_z", "alt_p0_vz",
                       "cov_ceiling", "tof_max_tilt", "tof_step_gate", "q_acc_lat", "q_flow_err", "flow_err_tau",
                       "r_flow", "lat_p0_v", "lat_p0_e", "min_flow_height", "mass", "gravity",
                       "drag_x", "drag_y", "flow_focal_scale", "imu_rate", "flow_rate"},
                   "estimator");
    auto& s = c.estimator;
    read_opt(e, "kp", s.kp);
    read_opt(e, "ki", s.ki);
    read_opt(e, "bias_limit", s.bias_limit);
    read_opt(e, "integrate_bias", s.integrate_bias);
    read_opt(e, "accel_gate_low", s.accel_gate_low);
    read_opt(e, "accel_gate_high", s.accel_gate_high);
    read_opt(e, "q_accel", s.q_accel);
    read_opt(e, "r_z", s.r_z);
    read_opt(e, "alt_p0_z", s.alt_p0_z);
    read_opt(e, "alt_p0_vz", s.alt_p0_vz);
    read_opt(e, "cov_ceiling", s.cov_ceiling);
    read_opt(e, "tof_max_tilt", s.tof_max_tilt);
    read_opt(e, "tof_step_gate", s.tof_step_gate);
    read_opt(e, "q_acc_lat", s.q_acc_lat);
    read_opt(e, "q_flow_err", s.q_flow_err);
    read_opt(e, "flow_err_tau", s.flow_err_tau);
    read_opt(e, "r_flow", s.r_flow);
    read_opt(e, "lat_p0_v", s.lat_p0_v);
    read_opt(e, "lat_p0_e", s.lat_p0_e);
    read_opt(e, "min_flow_height", s.min_flow_height);
    read_opt(e, "mass", s.mass);
    read_opt(e, "gravity", s.gravity);
    read_opt(e, "drag_x", s.drag_x);
    read_opt(e, "drag_y", s.drag_y);
    read_opt(e, "flow_focal_scale", s.flow_focal_scale);
    read_opt(e, "imu_rate", s.imu_rate);
    read_opt(e, "flow_rate", s.flow_rate);
  }
  if (j.contains("controller")) {
    const Json& k = j.at("controller");
    reject_unknown(k, {"pos_p", "pos_d", "alt_i", "alt_i_limit", "att_p", "att_d", "max_tilt",
                       "torque_limit", "min_vertical_accel"},
                   "controller");
    read_opt(k, "pos_p", c.controller.pos_p);
    read_opt(k, "pos_d", c.controller.pos_d);
    read_opt(k, "alt_i", c.controller.alt_i);
    read_opt(k, "alt_i_limit", c.controller.alt_i_limit);
    read_opt(k, "att_p", c.controller.att_p);
    read_opt(k, "att_d", c.controller.att_d);
    read_opt(k, "max_tilt", c.controller.max_tilt);
    read_opt(k, "torque_limit", c.controller.torque_limit);
    read_opt(k, "min_vertical_accel", c.controller.min_vertical_accel);
  }
  if (j.contains("terrain")) {
    const Json& t = j.at("terrain");
    reject_unknown(t, {"primitives", "bounds"}, "terrain");
    if (t.contains("primitives")) {
      c.terrain.clear();
      for (const Json& p : t.at("primitives")) {
        const std::string type = p.at("type").get<std::string>();
        if (type == "flat") {
          reject_unknown(p, {"type", "height"}, "terrain.flat");
          FlatPlane f;
          read_opt(p, "height", f.height);
          c.terrain.emplace_back(f);
        } else if (type == "bump") {
          reject_unknown(p, {"type", "cx", "cy", "peak_height", "radius"}, "terrain.bump");
          CurvedBump f;
          read_opt(p, "cx", f.cx);
          read_opt(p, "cy", f.cy);
          read_opt(p, "peak_height", f.peak_height);
          read_opt(p, "radius", f.radius);
          c.terrain.emplace_back(f);
        } else if (type == "flower") {
          reject_unknown(p, {"type", "cx", "cy", "radius", "stem_height"}, "terrain.flower");
          FlowerDisk f;
          read_opt(p, "cx", f.cx);
          read_opt(p, "cy", f.cy);
          read_opt(p, "radius", f.radius);
          read_opt(p, "stem_height", f.stem_height);
          c.terrain.emplace_back(f);
        } else {
          throw std::invalid_argument("unknown terrain primitive: " + type);
        }
      }
    }
    if (t.contains("bounds")) {
      const Json& b = t.at("bounds");
      if (!b.is_array() || b.size() != 4) {
        throw std::invalid_argument("terrain.bounds: expected [x_min, x_max, y_min, y_max]");
      }
      c.terrain_bounds = {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                          b[3].get<double>()};
    }
  }
  if (j.contains("initial")) {
    const Json& i = j.at("initial");
    reject_unknown(i, {"position", "yaw", "on_ground"}, "initial");
    read_opt(i, "position", c.initial.position);
    read_opt(i, "yaw", c.initial.yaw);
    read_opt(i, "on_ground", c.initial.on_ground);
  }
  if (j.contains("trajectory")) {
    const Json& t = j.at("trajectory");
    reject_unknown(t, {"kind", "origin", "duration", "separation", "switch_axis", "dwell",
                       "transition", "width", "height", "period", "diameter", "ramp"},
                   "trajectory");
    if (t.contains("kind")) c.trajectory.kind = parse_trajectory_kind(t.at("kind").get<std::string>());
    read_opt(t, "origin", c.trajectory.origin);
    read_opt(t, "duration", c.trajectory.duration);
    read_opt(t, "separation", c.trajectory.separation);
    read_opt(t, "switch_axis", c.trajectory.switch_axis);
    read_opt(t, "dwell", c.trajectory.dwell);
    read_opt(t, "transition", c.trajectory.transition);
    read_opt(t, "width", c.trajectory.width);
    read_opt(t, "height", c.trajectory.height);
    read_opt(t, "period", c.trajectory.period);
    read_opt(t, "diameter", c.trajectory.diameter);
    read_opt(t, "ramp", c.trajectory.ramp);
  }
  if (j.contains("mission")) {
    const Json& m = j.at("mission");
    reject_unknown(m, {"enabled", "takeoff_height", "commands", "command_file", "limits", "landing"},
                   "mission");
    read_opt(m, "enabled", c.mission.enabled);
    read_opt(m, "takeoff_height", c.mission.takeoff_height);
    read_opt(m, "command_file", c.mission.command_file);
    if (m.contains("commands")) {
      c.mission.commands.clear();
      for (const Json& cj : m.at("commands")) {
        reject_unknown(cj, {"t", "delta", "yaw_delta", "mode"}, "mission.commands");
        HighLevelCommand hc;
        hc.timestamp = cj.at("t").get<double>();
        read_opt(cj, "delta", hc.delta);
        read_opt(cj, "yaw_delta", hc.yaw_delta);
        if (cj.contains("mode")) hc.mode = detail::mode_from(cj.at("mode").get<std::string>());
        hc.source = CommandSource::Scripted;
        c.mission.commands.push_back(hc);
      }
    }
    if (m.contains("limits")) {
      const Json& l = m.at("limits");
      reject_unknown(l, {"max_step", "max_yaw_step", "max_rate", "slew_rate", "yaw_slew_rate"},
                     "mission.limits");
      read_opt(l, "max_step", c.mission.limits.max_step);
      read_opt(l, "max_yaw_step", c.mission.limits.max_yaw_step);
      read_opt(l, "max_rate", c.mission.limits.max_rate);
      read_opt(l, "slew_rate", c.mission.limits.slew_rate);
      read_opt(l, "yaw_slew_rate", c.mission.limits.yaw_slew_rate);
    }
    if (m.contains("landing")) {
      const Json& l = m.at("landing");
      reject_unknown(l, {"enabled", "start_time", "target_x", "target_y", "descent_rate",
                         "max_lateral_error", "overshoot"},
                     "mission.landing");
      read_opt(l, "enabled", c.mission.landing.enabled);
      read_opt(l, "start_time", c.mission.landing.start_time);
      read_opt(l, "target_x", c.mission.landing.target_x);
      read_opt(l, "target_y", c.mission.landing.target_y);
      read_opt(l, "descent_rate", c.mission.landing.params.descent_rate);
      read_opt(l, "max_lateral_error", c.mission.landing.params.max_lateral_error);
      read_opt(l, "overshoot", c.mission.landing.params.overshoot);
    }
  }
  if (j.contains("metrics")) {
    const Json& m = j.at("metrics");
    reject_unknown(m, {"window_start", "window_end", "terrain_region", "region_cx", "region_cy",
                       "region_radius"},
                   "metrics");
    read_opt(m, "window_start", c.metrics.window_start);
    read_opt(m, "window_end", c.metrics.window_end);
    read_opt(m, "terrain_region", c.metrics.terrain_region);
    read_opt(m, "region_cx", c.metrics.region_cx);
    read_opt(m, "region_cy", c.metrics.region_cy);
    read_opt(m, "region_radius", c.metrics.region_radius);
  }
  if (j.contains("thresholds")) {
    c.thresholds.clear();
    for (const Json& tj : j.at("thresholds")) {
      reject_unknown(tj, {"metric", "max", "min"}, "thresholds");
      Threshold th;
      th.metric = tj.at("metric").get<std::string>();
      if (tj.contains("max")) th.max = tj.at("max").get<double>();
      if (tj.contains("min")) th.min = tj.at("min").get<double>();
      c.thresholds.push_back(th);
    }
  }
  return c;
}

// FNV-1a, 64 bit.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Hash of the canonical (key-sorted, compact) JSON form.
inline std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

// ---------------------------------------------------------------------------
// Presets

namespace detail {

inline ExperimentConfig hover_preset(const std::string& name, double height) {
  ExperimentConfig c;
  c.name = name;
  c.duration = 12.0;
  c.trajectory.kind = TrajectoryKind::Hover;
  c.trajectory.origin = {0.0, 0.0, height};
  c.trajectory.duration = c.duration;
  c.initial.position = c.trajectory.origin;
  return c;
}

// Course: takeoff at the origin, curved obstacle, flower at the far end.
inline void course_terrain(ExperimentConfig& c, double bump_x, double flower_x, double flower_y) {
  c.terrain = {FlatPlane{0.0}, CurvedBump{bump_x, 0.0, 0.06, 0.15},
               FlowerDisk{flower_x, flower_y, 0.05, 0.04}};
  c.metrics.terrain_region = true;
  c.metrics.region_cx = bump_x;
  c.metrics.region_cy = 0.0;
  c.metrics.region_radius = 0.15;
}

inline HighLevelCommand cmd_at(double t, double dx, double dy, double dz) {
  HighLevelCommand h;
  h.timestamp = t;
  h.delta = {dx, dy, dz};
  return h;
}

}  // namespace detail

inline std::vector<std::string> preset_names() {
  return {"hover5",   "hover10",    "setpoint40", "figure8",     "circle18",
          "mission30s", "mission15s", "hover5-ideal"};
}

inline ExperimentConfig preset(const std::string& name) {
  using detail::cmd_at;
  if (name == "hover5" || name == "hover5-ideal") {
    auto c = detail::hover_preset(name, 0.05);
    c.thresholds = {{"lateral_rms_cm", 4.9, {}}, {"altitude_rms_cm", 0.5, {}}};
    if (name == "hover5-ideal") {
      c.noise = NoiseConfig::noiseless();
      c.calibration.bias_std = 0.0;
      c.duration = c.trajectory.duration = 10.0;
      c.thresholds = {{"lateral_rms_cm", 0.1, {}}, {"altitude_rms_cm", 0.1, {}}};
    }
    return c;
  }
  if (name == "hover10") {
    auto c = detail::hover_preset(name, 0.10);
    c.thresholds = {{"lateral_rms_cm", 4.9 * 1.5, {}}, {"altitude_rms_cm", 0.5, {}}};
    return c;
  }
  if (name == "setpoint40") {
    ExperimentConfig c;
    c.name = name;
    c.trajectory.kind = TrajectoryKind::SetpointSwitch;
    c.trajectory.origin = {-0.20, 0.0, 0.08};
    c.trajectory.separation = 0.40;
    c.trajectory.dwell = 1.2;
    c.trajectory.transition = 1.1;
    c.duration = c.trajectory.duration = 7.0;
    c.initial.position = c.trajectory.origin;
    c.thresholds = {{"lateral_rms_cm", 6.8, {}}, {"max_speed_cm_s", 90.0, 40.0}};
    return c;
  }
  if (name == "figure8") {
    ExperimentConfig c;
    c.name = name;
    c.trajectory.kind = TrajectoryKind::FigureEight;
    c.trajectory.origin = {0.0, 0.0, 0.09};
    c.trajectory.width = 0.22;
    c.trajectory.height = 0.10;
    c.trajectory.period = 7.0;
    c.duration = c.trajectory.duration = 7.0;
    c.initial.position = c.trajectory.origin;
    c.thresholds = {{"lateral_rms_cm", 3.3, {}}};
    return c;
  }
  if (name == "circle18") {
    ExperimentConfig c;
    c.name = name;
    c.trajectory.kind = TrajectoryKind::Circle;
    c.trajectory.origin = {0.0, 0.0, 0.05};
    c.trajectory.diameter = 0.18;
    c.trajectory.period = 7.0 / 6.0;
    c.trajectory.ramp = 1.0;
    c.duration = c.trajectory.duration = 7.0;
    c.initial.position = c.trajectory.origin;
    c.thresholds = {{"lateral_rms_cm", 9.1, {}}};
    return c;
  }
  if (name == "mission30s" || name == "mission15s") {
    const bool fast = name == "mission15s";
    ExperimentConfig c;
    c.name = name;
    c.initial.position = {0.0, 0.0, 0.0};
    c.initial.on_ground = true;
    c.mission.enabled = true;
    c.mission.takeoff_height = 0.06;
    const double flower_x = 1.10;
    detail::course_terrain(c, fast ? 0.30 : 0.40, flower_x, fast ? 0.05 : 0.0);
    auto& cmds = c.mission.commands;
    if (!fast) {
      // Traverse at 1 Hz commands (0.05 m/s), a brief climb and descent after
      // the obstacle, then hold over the flower and land.
      double t = 2.0;
      for (int i = 0; i < 22; ++i, t += 1.0) {
        cmds.push_back(cmd_at(t, 0.05, 0.0, 0.0));
        if (i == 15) cmds.push_back(cmd_at(t + 0.5, 0.0, 0.0, 0.05));
        if (i == 17) cmds.push_back(cmd_at(t + 0.5, 0.0, 0.0, -0.05));
      }
      c.mission.landing = {true, 24.5, flower_x, 0.0, {}};
      c.duration = 32.0;
    } else {
      // Twice as fast with a sideways dodge around the obstacle; the flower
      // step is followed by the terrain-relative altitude hold alone.
      double t = 1.5;
      for (int i = 0; i < 22; ++i, t += 0.5) {
        cmds.push_back(cmd_at(t, 0.05, 0.0, 0.0));
        if (i == 3) cmds.push_back(cmd_at(t + 0.25, 0.0, 0.05, 0.0));
      }
      c.mission.landing = {true, 13.5, flower_x, 0.05, {}};
      c.duration = 17.0;
    }
    c.thresholds = {{"touchdown_error_cm", 2.0, {}},
                    {"terrain_height_error_max_cm", 2.0, {}},
                    {"course_length_m", {}, 1.0},
                    {"touchdown_time_s", 35.0, {}}};
    return c;
  }
  throw std::invalid_argument("unknown preset: " + name);
}

inline bool is_preset(const std::string& name) {
  for (const auto& n : preset_names()) {
    if (n == name) return true;
  }
  return false;
}

/// A preset name or a JSON file. A file may name a "preset" to overlay.
inline ExperimentConfig load_config(const std::string& preset_or_path) {
  if (is_preset(preset_or_path)) return preset(preset_or_path);
  std::ifstream in(preset_or_path);
  if (!in) throw std::runtime_error("not a preset and cannot open file: " + preset_or_path);
  Json j;
  try {
    in >> j;
  } catch (const Json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  ExperimentConfig base;
  if (j.contains("preset")) base = preset(j.at("preset").get<std::string>());
  return config_from_json(j, base);
}

}  // namespace imav
