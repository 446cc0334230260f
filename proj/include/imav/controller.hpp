#pragma once

#include <cmath>
#include <stdexcept>

#include "imav/estimator.hpp"
#include "imav/math.hpp"
#include "imav/vehicle.hpp"

namespace imav {

enum class AltitudeMode { Absolute, TerrainRelative };

/// Desired pose handed to the controller. z is height above terrain in
/// terrain-relative mode, world altitude otherwise. The feedforward terms are
/// zero for fixed setpoints and come from trajectory generators otherwise.
struct MissionSetpoint {
  Vec3<double> position{};
  double yaw{0.0};
  AltitudeMode mode{AltitudeMode::TerrainRelative};
  Vec3<double> velocity_ff{};
  Vec3<double> accel_ff{};
  double yaw_rate_ff{0.0};

  bool operator==(const MissionSetpoint&) const = default;
};

enum class Precision { Double, Single };

inline const char* to_string(Precision p) { return p == Precision::Double ? "double" : "single"; }
inline Precision parse_precision(const std::string& s) {
  if (s == "double") return Precision::Double;
  if (s == "single") return Precision::Single;
  throw std::invalid_argument("unknown precision mode: " + s);
}

struct ControllerGains {
  // Position loop (outer), per axis x, y, z.
  Vec3<double> pos_p{36.0, 36.0, 100.0};   // 1/s^2
  Vec3<double> pos_d{10.0, 10.0, 20.0};    // 1/s
  double alt_i{60.0};                      // 1/s^3, altitude only
  double alt_i_limit{2.0};                 // m/s^2 of integral authority
  // Attitude loop (inner), expressed as angular-acceleration gains.
  Vec3<double> att_p{1600.0, 1600.0, 400.0};  // 1/s^2
  Vec3<double> att_d{70.0, 70.0, 40.0};       // 1/s
  double max_tilt{deg2rad(30.0)};
  Vec3<double> torque_limit{3e-4, 3e-4, 1.5e-4};  // N m
  double min_vertical_accel{0.3};          // fraction of g kept along world z

  void validate() const {
    auto nonneg = [](const Vec3<double>& v) { return v.x >= 0 && v.y >= 0 && v.z >= 0; };
    if (!nonneg(pos_p) || !nonneg(pos_d) || !nonneg(att_p) || !nonneg(att_d) || alt_i < 0 ||
        alt_i_limit < 0) {
      throw std::invalid_argument("controller gains must be nonnegative");
    }
    if (!(max_tilt > 0.0) || max_tilt > deg2rad(45.0) + 1e-12) {
      throw std::invalid_argument("max tilt must be in (0, 45 deg]");
    }
    if (!nonneg(torque_limit)) throw std::invalid_argument("torque limits must be nonnegative");
  }
};

template <typename T>
struct ControllerState {
  T alt_integral{0};
  bool fault{false};
  bool saturated{false};
};

/// Estimate as seen by the controller. z is height above terrain; in
/// absolute mode the harness adds the mapped terrain height before use.
template <typename T>
struct ControlInput {
  Vec3<T> position{};
  Vec3<T> velocity{};
  Quat<T> attitude{};
  Vec3<T> rates{};

  static ControlInput from(const EstimatedState<T>& e, T terrain_offset = T(0)) {
    ControlInput in;
    in.position = {e.lateral.x_hat, e.lateral.y_hat, e.altitude.z_hat + terrain_offset};
    in.velocity = {e.lateral.vx_hat, e.lateral.vy_hat, e.altitude.vz_hat};
    in.attitude = e.attitude.q_hat;
    in.rates = e.attitude.omega_hat;
    return in;
  }
};

template <typename T>
struct ControlOutput {
  ControlCommand cmd;
  ControllerState<T> state;
};

namespace detail {

// Attitude whose body z axis is b3 and whose heading is yaw.
template <typename T>
Quat<T> attitude_from_thrust_direction(const Vec3<T>& b3, T yaw) {
  const Vec3<T> xc{std::cos(yaw), std::sin(yaw), T(0)};
  Vec3<T> b2 = b3.cross(xc);
  const T n2 = b2.norm();
  b2 = b2 / n2;
  const Vec3<T> b1 = b2.cross(b3);
  // Rotation matrix with columns b1, b2, b3 -> quaternion (Shepperd).
  const T r00 = b1.x, r01 = b2.x, r02 = b3.x;
  const T r10 = b1.y, r11 = b2.y, r12 = b3.y;
  const T r20 = b1.z, r21 = b2.z, r22 = b3.z;
  const T tr = r00 + r11 + r22;
  Quat<T> q;
  if (tr > T(0)) {
    const T s = std::sqrt(tr + T(1)) * T(2);
    q = {s / T(4), (r21 - r12) / s, (r02 - r20) / s, (r10 - r01) / s};
  } else if (r00 > r11 && r00 > r22) {
    const T s = std::sqrt(T(1) + r00 - r11 - r22) * T(2);
    q = {(r21 - r12) / s, s / T(4), (r01 + r10) / s, (r02 + r20) / s};
  } else if (r11 > r22) {
    const T s = std::sqrt(T(1) + r11 - r00 - r22) * T(2);
    q = {(r02 - r20) / s, (r01 + r10) / s, s / T(4), (r12 + r21) / s};
  } else {
    const T s = std::sqrt(T(1) + r22 - r00 - r11) * T(2);
    q = {(r10 - r01) / s, (r02 + r20) / s, (r12 + r21) / s, s / T(4)};
  }
  return q.normalized();
}

template <typename T>
bool finite_input(const ControlInput<T>& in) {
  return all_finite(in.position) && all_finite(in.velocity) && all_finite(in.attitude) &&
         all_finite(in.rates);
}

}  // namespace detail

/// Cascaded controller tick: position PD (plus altitude integral) produces a
/// desired acceleration, which sets thrust direction and magnitude; an
/// attitude PD on the error quaternion produces body torque. All outputs are
/// saturated; the altitude integral stops accumulating while thrust saturates.
template <typename T>
ControlOutput<T> control_tick(const ControlInput<T>& est, const MissionSetpoint& sp,
                              const ControllerGains& gains, const VehicleParams& vehicle,
                              const ControllerState<T>& prev, T dt) {
  ControlOutput<T> out;
  out.state = prev;
  const T mass = T(vehicle.mass);
  const T g = T(vehicle.gravity);
  const T fmax = T(vehicle.max_total_thrust());

  if (!detail::finite_input(est) || !all_finite(sp.position) || !std::isfinite(sp.yaw)) {
    out.cmd.thrust = clamp(vehicle.weight(), 0.0, vehicle.max_total_thrust());
    out.cmd.torque = {};
    out.state.fault = true;
    return out;
  }

  const Vec3<T> sp_pos{sp.position};
  const Vec3<T> sp_vel{sp.velocity_ff};
  const Vec3<T> sp_acc{sp.accel_ff};
  const Vec3<T> kp{gains.pos_p}, kd{gains.pos_d};
  const Vec3<T> ep = sp_pos - est.position;
  const Vec3<T> ev = sp_vel - est.velocity;

  const T ilim = T(gains.alt_i_limit);
  T integral = prev.alt_integral;
  Vec3<T> acc = sp_acc + ep.cwise(kp) + ev.cwise(kd);
  acc.z += integral;

  // Thrust direction with tilt limit.
  Vec3<T> a_cmd = acc + Vec3<T>{T(0), T(0), g};
  a_cmd.z = std::max(a_cmd.z, T(gains.min_vertical_accel) * g);
  const T horiz = std::hypot(a_cmd.x, a_cmd.y);
  const T max_horiz = a_cmd.z * std::tan(T(gains.max_tilt));
  if (horiz > max_horiz) {
    const T s = max_horiz / horiz;
    a_cmd.x *= s;
    a_cmd.y *= s;
  }
  const Vec3<T> b3_hat = est.attitude.body_z_in_world();
  T thrust = mass * a_cmd.dot(b3_hat);
  const bool saturated = thrust > fmax || thrust < T(0);
  thrust = clamp(thrust, T(0), fmax);

  // Conditional integration: freeze while saturated in the direction of the error.
  const T ez = ep.z;
  if (!(saturated && ((thrust >= fmax && ez > T(0)) || (thrust <= T(0) && ez < T(0))))) {
    integral = clamp(integral + T(gains.alt_i) * ez * dt, -ilim, ilim);
  }

  const Vec3<T> b3_des = a_cmd / a_cmd.norm();
  const Quat<T> q_des = detail::attitude_from_thrust_direction(b3_des, T(sp.yaw));
  Quat<T> q_err = est.attitude.conjugate() * q_des;
  if (q_err.w < T(0)) q_err = q_err * T(-1);
  const Vec3<T> e_att = q_err.vec() * T(2);

  const Vec3<T> rate_des = est.attitude.rotate_inverse({T(0), T(0), T(sp.yaw_rate_ff)});
  const Vec3<T> e_rate = rate_des - est.rates;
  const Vec3<T> inertia{vehicle.inertia};
  Vec3<T> torque = (e_att.cwise(Vec3<T>{gains.att_p}) + e_rate.cwise(Vec3<T>{gains.att_d}))
                       .cwise(inertia);
  const Vec3<T> tlim{gains.torque_limit};
  torque = {clamp(torque.x, -tlim.x, tlim.x), clamp(torque.y, -tlim.y, tlim.y),
            clamp(torque.z, -tlim.z, tlim.z)};

  out.cmd.thrust = clamp(static_cast<double>(thrust), 0.0, vehicle.max_total_thrust());
  out.cmd.torque = Vec3<double>(torque);
  out.state.alt_integral = integral;
  out.state.saturated = saturated;
  out.state.fault = false;
  return out;
}

/// Stateful controller with a fixed precision chosen before the first tick.
template <typename T>
class FlightController {
 public:
  FlightController(ControllerGains gains, VehicleParams vehicle)
      : gains_(gains), vehicle_(vehicle) {
    gains_.validate();
  }

  ControlCommand tick(const ControlInput<T>& est, const MissionSetpoint& sp, T dt, double t) {
    auto out = control_tick(est, sp, gains_, vehicle_, state_, dt);
    state_ = out.state;
    out.cmd.timestamp = t;
    return out.cmd;
  }

  const ControllerState<T>& state() const { return state_; }
  void reset_integrator() { state_.alt_integral = T(0); }

 private:
  ControllerGains gains_;
  VehicleParams vehicle_;
  ControllerState<T> state_{};
};

}  // namespace imav
