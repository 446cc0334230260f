#pragma once

// Cascaded state estimator: a Mahony complementary filter for attitude feeds a
// two-state altitude Kalman filter, whose height estimate scales the optical
// flow for a per-axis lateral-velocity Kalman filter; lateral position is the
// integral of the velocity estimate. Every filter matrix is 2x2.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "imav/mat2.hpp"
#include "imav/math.hpp"
#include "imav/sensors.hpp"

namespace imav {

struct EstimatorConfig {
  // Attitude (Mahony).
  double kp{1.0};
  double ki{0.3};
  double bias_limit{0.1};        // rad/s per axis
  bool integrate_bias{true};     // false freezes b_hat at its pre-flight value
  double accel_gate_low{0.5};    // fraction of g
  double accel_gate_high{1.5};

  // Altitude KF.
  double q_accel{4.0};           // (m/s^2)^2, piecewise-constant acceleration noise
  double r_z{1e-6};              // m^2
  double alt_p0_z{1e-6};
  double alt_p0_vz{1e-4};
  double cov_ceiling{10.0};
  double tof_max_tilt{deg2rad(45.0)};
  double tof_step_gate{0.02};    // m; larger innovations re-anchor z_hat (terrain edge)

  // Lateral KF, per axis state [velocity, flow velocity error].
  double q_acc_lat{0.5};         // m^2/s^3
  double q_flow_err{1e-5};       // m^2/s^3
  double flow_err_tau{2.0};      // s
  double r_flow{0.02};           // (rad/s)^2, flow-rate measurement variance
  double lat_p0_v{1e-4};
  double lat_p0_e{1e-6};
  double min_flow_height{0.01};  // m

  // Vehicle and sensor model known to the estimator.
  double mass{1.29e-3};
  double gravity{9.81};
  double drag_x{2e-3}, drag_y{2e-3};
  double flow_focal_scale{400.0};
  double imu_rate{480.0};
  double flow_rate{120.0};
};

template <typename T>
struct AttitudeBelief {
  Quat<T> q_hat{};
  Vec3<T> omega_hat{};
  Vec3<T> b_hat{};
};

template <typename T>
struct AltitudeBelief {
  T z_hat{0};
  T vz_hat{0};
  Mat2<T> cov{};
  Vec2<T> gain{};                // last Kalman gain applied
  std::uint32_t psd_events{0};
  std::uint32_t terrain_steps{0};
};

template <typename T>
struct LateralBelief {
  T vx_hat{0}, vy_hat{0};
  T ex_hat{0}, ey_hat{0};        // flow-derived velocity error states
  Mat2<T> cov_x{}, cov_y{};
  T x_hat{0}, y_hat{0};
  T vx_prev{0}, vy_prev{0};      // velocity at the previous integration step
  std::uint32_t psd_events{0};
};

/// Samples that became available at one base tick.
struct SensorFrame {
  double time{0.0};
  std::optional<ImuSample> imu;
  std::optional<TofSample> tof;
  std::optional<FlowSample> flow;
};

template <typename T>
struct EstimatedState {
  AttitudeBelief<T> attitude;
  AltitudeBelief<T> altitude;
  LateralBelief<T> lateral;
  double time{0.0};
  T thrust_in{0};                // F consumed by the last tick

  std::optional<double> last_imu_t, last_tof_t, last_flow_t;
  std::uint32_t dropped_samples{0};
  bool flow_used{false};         // last tick applied a flow correction
  bool tof_used{false};
};

// ---------------------------------------------------------------------------
// Attitude

template <typename T>
struct MahonyGains {
  T kp{1}, ki{0};
  T bias_limit{T(0.1)};
  bool integrate_bias{true};
  T gravity{T(9.81)};
  T gate_low{T(0.5)}, gate_high{T(1.5)};

  static MahonyGains from(const EstimatorConfig& c) {
    return {T(c.kp), T(c.ki), T(c.bias_limit), c.integrate_bias, T(c.gravity),
            T(c.accel_gate_low), T(c.accel_gate_high)};
  }
};

/// One Mahony step. The gyro bias estimate is removed from the measured rate,
/// the cross product of measured and predicted gravity directions drives both
/// the bias integrator and the proportional rate correction.
template <typename T>
AttitudeBelief<T> mahony_update(const AttitudeBelief<T>& bel, const ImuSample& imu, T dt,
                                const MahonyGains<T>& g) {
  AttitudeBelief<T> out = bel;
  const Vec3<T> gyro{imu.gyro};
  const Vec3<T> accel{imu.accel};

  Vec3<T> correction{};
  const T a_norm = accel.norm();
  if (a_norm > T(0) && a_norm >= g.gate_low * g.gravity && a_norm <= g.gate_high * g.gravity) {
    const Vec3<T> measured = accel / a_norm;
    const Vec3<T> predicted = bel.q_hat.world_z_in_body();
    const Vec3<T> innovation = measured.cross(predicted);
    if (g.integrate_bias && g.ki > T(0)) {
      out.b_hat -= innovation * (g.ki * dt);
      out.b_hat.x = clamp(out.b_hat.x, -g.bias_limit, g.bias_limit);
      out.b_hat.y = clamp(out.b_hat.y, -g.bias_limit, g.bias_limit);
      out.b_hat.z = clamp(out.b_hat.z, -g.bias_limit, g.bias_limit);
    }
    correction = innovation * g.kp;
  }
  out.omega_hat = gyro - out.b_hat;
  const Vec3<T> rate = out.omega_hat + correction;
  out.q_hat = (bel.q_hat * Quat<T>::from_rotation_vector(rate * dt)).normalized();
  return out;
}

// ---------------------------------------------------------------------------
// Altitude

template <typename T>
struct RangeAltitude {
  T z_meas{0};
  bool valid{false};
};

/// Slant range to vertical height via the body-z/world-z direction cosine.
template <typename T>
RangeAltitude<T> tilt_compensate_range(const Quat<T>& q_hat, const TofSample& tof,
                                       T max_tilt = deg2rad(T(45))) {
  if (!tof.valid) return {};
  const T c33 = q_hat.body_z_in_world().z;
  if (c33 < std::cos(max_tilt)) return {};
  return {T(tof.distance) * c33, true};
}

template <typename T>
struct AltitudeNoise {
  T q_accel{1};
  T r_z{T(1e-6)};
  T ceiling{10};
  T step_gate{std::numeric_limits<T>::infinity()};
};

template <typename T>
struct VerticalModel {
  T mass{T(1.29e-3)};
  T gravity{T(9.81)};
};

/// Predict with thrust-driven vertical acceleration, then (optionally) correct
/// with a height measurement, H = [1 0]. Joseph-form update, re-symmetrized.
/// An innovation beyond the step gate is a terrain discontinuity under the
/// sensor rather than vehicle motion: z_hat is re-anchored, vz_hat kept.
template <typename T>
AltitudeBelief<T> altitude_kf_step(const AltitudeBelief<T>& bel, const Quat<T>& q_hat,
                                   std::optional<T> z_meas, T thrust, T dt,
                                   const AltitudeNoise<T>& noise, const VerticalModel<T>& model) {
  AltitudeBelief<T> out = bel;
  if (dt > T(0)) {
    const T c33 = q_hat.body_z_in_world().z;
    const T accel = c33 * thrust / model.mass - model.gravity;
    out.z_hat = bel.z_hat + bel.vz_hat * dt + accel * dt * dt / T(2);
    out.vz_hat = bel.vz_hat + accel * dt;
    const Mat2<T> F{T(1), dt, T(0), T(1)};
    const T g0 = dt * dt / T(2), g1 = dt;
    const Mat2<T> Q = Mat2<T>{g0 * g0, g0 * g1, g1 * g0, g1 * g1} * noise.q_accel;
    out.cov = (F * bel.cov * F.transpose() + Q).symmetrized();
  }
  if (z_meas && std::abs(*z_meas - out.z_hat) > noise.step_gate) {
    out.z_hat = *z_meas;
    out.cov = Mat2<T>::diag(noise.r_z, out.cov.m11);
    out.gain = {T(1), T(0)};
    ++out.terrain_steps;
  } else if (z_meas) {
    const Mat2<T>& P = out.cov;
    const T s = P.m00 + noise.r_z;
    const Vec2<T> k{P.m00 / s, P.m10 / s};
    const T innov = *z_meas - out.z_hat;
    out.z_hat += k.a * innov;
    out.vz_hat += k.b * innov;
    const Mat2<T> ikh{T(1) - k.a, T(0), -k.b, T(1)};
    const Mat2<T> krk = Mat2<T>{k.a * k.a, k.a * k.b, k.b * k.a, k.b * k.b} * noise.r_z;
    out.cov = (ikh * P * ikh.transpose() + krk).symmetrized();
    out.gain = k;
  }
  if (project_psd(out.cov, T(0), noise.ceiling)) ++out.psd_events;
  return out;
}

// ---------------------------------------------------------------------------
// Lateral velocity

template <typename T>
struct LateralNoise {
  T q_acc_lat{T(0.5)};
  T q_flow_err{T(1e-5)};
  T flow_err_tau{2};
  T r_flow{T(0.02)};
  T ceiling{10};
  T min_height{T(0.01)};
};

template <typename T>
struct LateralModel {
  T mass{T(1.29e-3)};
  T drag_x{T(2e-3)}, drag_y{T(2e-3)};
  T focal_scale{400};
};

/// Flow sample with the frame interval it was accumulated over.
struct FlowFrame {
  FlowSample sample;
  double interval{1.0 / 120.0};
};

namespace detail {

template <typename T>
void lateral_axis_predict(T& v, T& e, Mat2<T>& P, T accel, T dt, const LateralNoise<T>& n) {
  const T phi = std::exp(-dt / n.flow_err_tau);
  v += accel * dt;
  e *= phi;
  const Mat2<T> F{T(1), T(0), T(0), phi};
  const Mat2<T> Q = Mat2<T>::diag(n.q_acc_lat * dt, n.q_flow_err * dt);
  P = (F * P * F.transpose() + Q).symmetrized();
}

// Measurement y = v + e, H = [1 1].
template <typename T>
void lateral_axis_update(T& v, T& e, Mat2<T>& P, T meas, T r) {
  const T s = P.m00 + P.m01 + P.m10 + P.m11 + r;
  const Vec2<T> k{(P.m00 + P.m01) / s, (P.m10 + P.m11) / s};
  const T innov = meas - (v + e);
  v += k.a * innov;
  e += k.b * innov;
  const Mat2<T> ikh{T(1) - k.a, -k.a, -k.b, T(1) - k.b};
  const Mat2<T> krk = Mat2<T>{k.a * k.a, k.a * k.b, k.b * k.a, k.b * k.b} * r;
  P = (ikh * P * ikh.transpose() + krk).symmetrized();
}

}  // namespace detail

/// World-frame horizontal velocity implied by a flow frame, or nullopt when
/// the frame is unusable. Flow is derotated with omega_hat, scaled by the
/// slant range, then mapped through the estimated attitude (a 2x2 solve, the
/// vertical component supplied by the altitude filter).
template <typename T>
std::optional<Vec2<T>> flow_to_world_velocity(const Quat<T>& q_hat, const Vec3<T>& omega_hat,
                                              T z_hat, T vz_hat, const FlowFrame& frame,
                                              T focal_scale, T min_height) {
  if (!(frame.sample.quality > 0.0) || !(z_hat > min_height) || !(frame.interval > 0.0)) {
    return std::nullopt;
  }
  const T c33 = q_hat.body_z_in_world().z;
  if (!(c33 > T(0))) return std::nullopt;
  const T range = z_hat / c33;
  const T k = focal_scale * T(frame.interval);
  const T vbx = (T(frame.sample.flow[0]) / k + omega_hat.y) * range;
  const T vby = (T(frame.sample.flow[1]) / k - omega_hat.x) * range;

  const Vec3<T> bx = q_hat.rotate({T(1), T(0), T(0)});
  const Vec3<T> by = q_hat.rotate({T(0), T(1), T(0)});
  const Mat2<T> A{bx.x, bx.y, by.x, by.y};
  const T det = A.det();
  if (std::abs(det) < T(1e-6)) return std::nullopt;
  const Vec2<T> rhs{vbx - bx.z * vz_hat, vby - by.z * vz_hat};
  const Mat2<T> inv = Mat2<T>{A.m11, -A.m01, -A.m10, A.m00} * (T(1) / det);
  return inv * rhs;
}

template <typename T>
LateralBelief<T> lateral_kf_step(const LateralBelief<T>& bel, const Quat<T>& q_hat,
                                 const Vec3<T>& omega_hat, T z_hat, T vz_hat,
                                 const std::optional<FlowFrame>& flow, T thrust, T dt,
                                 const LateralNoise<T>& noise, const LateralModel<T>& model,
                                 bool* flow_applied = nullptr) {
  LateralBelief<T> out = bel;
  if (flow_applied) *flow_applied = false;
  if (dt > T(0)) {
    const Vec3<T> b3 = q_hat.body_z_in_world();
    const T ax = b3.x * thrust / model.mass - model.drag_x / model.mass * bel.vx_hat;
    const T ay = b3.y * thrust / model.mass - model.drag_y / model.mass * bel.vy_hat;
    detail::lateral_axis_predict(out.vx_hat, out.ex_hat, out.cov_x, ax, dt, noise);
    detail::lateral_axis_predict(out.vy_hat, out.ey_hat, out.cov_y, ay, dt, noise);
  }
  if (flow) {
    const auto v = flow_to_world_velocity(q_hat, omega_hat, z_hat, vz_hat, *flow,
                                          model.focal_scale, noise.min_height);
    if (v) {
      const T c33 = q_hat.body_z_in_world().z;
      const T range = z_hat / c33;
      const T r = noise.r_flow * range * range;
      detail::lateral_axis_update(out.vx_hat, out.ex_hat, out.cov_x, v->a, r);
      detail::lateral_axis_update(out.vy_hat, out.ey_hat, out.cov_y, v->b, r);
      if (flow_applied) *flow_applied = true;
    }
  }
  if (project_psd(out.cov_x, T(0), noise.ceiling)) ++out.psd_events;
  if (project_psd(out.cov_y, T(0), noise.ceiling)) ++out.psd_events;
  return out;
}

/// Trapezoidal integral of the lateral velocity estimate.
template <typename T>
LateralBelief<T> integrate_position(const LateralBelief<T>& bel, T dt) {
  LateralBelief<T> out = bel;
  out.x_hat += (bel.vx_prev + bel.vx_hat) * (dt / T(2));
  out.y_hat += (bel.vy_prev + bel.vy_hat) * (dt / T(2));
  out.vx_prev = bel.vx_hat;
  out.vy_prev = bel.vy_hat;
  return out;
}

// ---------------------------------------------------------------------------
// Cascade

struct EstimatorInit {
  Quat<double> q{};
  Vec3<double> position{};       // z is height above terrain
  Vec3<double> velocity{};
  Vec3<double> gyro_bias{};
};

template <typename T>
EstimatedState<T> initial_estimate(const EstimatorConfig& cfg, const EstimatorInit& init,
                                   double t0 = 0.0) {
  EstimatedState<T> s;
  s.time = t0;
  s.attitude.q_hat = Quat<T>(init.q);
  s.attitude.b_hat = Vec3<T>(init.gyro_bias);
  s.altitude.z_hat = T(init.position.z);
  s.altitude.vz_hat = T(init.velocity.z);
  s.altitude.cov = Mat2<T>::diag(T(cfg.alt_p0_z), T(cfg.alt_p0_vz));
  s.lateral.x_hat = T(init.position.x);
  s.lateral.y_hat = T(init.position.y);
  s.lateral.vx_hat = s.lateral.vx_prev = T(init.velocity.x);
  s.lateral.vy_hat = s.lateral.vy_prev = T(init.velocity.y);
  s.lateral.cov_x = s.lateral.cov_y = Mat2<T>::diag(T(cfg.lat_p0_v), T(cfg.lat_p0_e));
  return s;
}

/// Advances the estimate to time t: attitude on IMU arrival, then the altitude
/// filter (predict every tick, correct on ToF), then the lateral filter
/// (predict every tick, correct on flow), then position integration. Samples
/// not newer than the last accepted sample of their kind are dropped.
template <typename T>
EstimatedState<T> estimator_tick(const EstimatedState<T>& est, const SensorFrame& frame, T thrust,
                                 double t, const EstimatorConfig& cfg) {
  EstimatedState<T> out = est;
  out.thrust_in = thrust;
  out.flow_used = false;
  out.tof_used = false;
  const T dt = T(t - est.time);

  auto fresh = [&](const std::optional<double>& last, double ts) {
    if (last && ts <= *last) {
      ++out.dropped_samples;
      return false;
    }
    return true;
  };

  if (frame.imu && fresh(est.last_imu_t, frame.imu->timestamp)) {
    const double imu_dt =
        est.last_imu_t ? frame.imu->timestamp - *est.last_imu_t : 1.0 / cfg.imu_rate;
    out.attitude = mahony_update(est.attitude, *frame.imu, T(imu_dt), MahonyGains<T>::from(cfg));
    out.last_imu_t = frame.imu->timestamp;
  }

  std::optional<T> z_meas;
  if (frame.tof && fresh(est.last_tof_t, frame.tof->timestamp)) {
    out.last_tof_t = frame.tof->timestamp;
    const auto r = tilt_compensate_range(out.attitude.q_hat, *frame.tof, T(cfg.tof_max_tilt));
    if (r.valid) z_meas = r.z_meas;
  }
  const AltitudeNoise<T> alt_noise{T(cfg.q_accel), T(cfg.r_z), T(cfg.cov_ceiling),
                                   cfg.tof_step_gate > 0.0
                                       ? T(cfg.tof_step_gate)
                                       : std::numeric_limits<T>::infinity()};
  const VerticalModel<T> vmodel{T(cfg.mass), T(cfg.gravity)};
  out.altitude =
      altitude_kf_step(est.altitude, out.attitude.q_hat, z_meas, thrust, dt, alt_noise, vmodel);
  out.tof_used = z_meas.has_value();

  std::optional<FlowFrame> flow;
  if (frame.flow && fresh(est.last_flow_t, frame.flow->timestamp)) {
    const double interval =
        est.last_flow_t ? frame.flow->timestamp - *est.last_flow_t : 1.0 / cfg.flow_rate;
    flow = FlowFrame{*frame.flow, interval};
    out.last_flow_t = frame.flow->timestamp;
  }
  const LateralNoise<T> lat_noise{T(cfg.q_acc_lat), T(cfg.q_flow_err), T(cfg.flow_err_tau),
                                  T(cfg.r_flow),    T(cfg.cov_ceiling), T(cfg.min_flow_height)};
  const LateralModel<T> lmodel{T(cfg.mass), T(cfg.drag_x), T(cfg.drag_y),
                               T(cfg.flow_focal_scale)};
  bool applied = false;
  out.lateral = lateral_kf_step(est.lateral, out.attitude.q_hat, out.attitude.omega_hat,
                                out.altitude.z_hat, out.altitude.vz_hat, flow, thrust, dt,
                                lat_noise, lmodel, &applied);
  out.flow_used = applied;

  if (dt > T(0)) out.lateral = integrate_position(out.lateral, dt);
  if (t > est.time) out.time = t;
  return out;
}

/// Stateful convenience wrapper around estimator_tick.
template <typename T>
class CascadedEstimator {
 public:
  CascadedEstimator(EstimatorConfig cfg, const EstimatorInit& init, double t0 = 0.0)
      : cfg_(cfg), state_(initial_estimate<T>(cfg, init, t0)) {}

  const EstimatedState<T>& tick(const SensorFrame& frame, T thrust, double t) {
    state_ = estimator_tick(state_, frame, thrust, t, cfg_);
    return state_;
  }

  const EstimatedState<T>& state() const { return state_; }
  const EstimatorConfig& config() const { return cfg_; }

 private:
  EstimatorConfig cfg_;
  EstimatedState<T> state_;
};

}  // namespace imav
