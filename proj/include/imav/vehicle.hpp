#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "imav/math.hpp"
#include "imav/terrain.hpp"

namespace imav {

struct VehicleParams {
  double mass{1.29e-3};                        // kg
  Vec3<double> inertia{1.5e-7, 1.5e-7, 2.5e-7};  // principal moments, kg m^2
  double gravity{9.81};                        // m/s^2
  double thrust_to_weight{1.9};
  Vec3<double> linear_drag{2e-3, 2e-3, 2e-3};  // N s/m
  double flap_frequency{330.0};                // Hz

  double weight() const { return mass * gravity; }
  double max_total_thrust() const { return thrust_to_weight * mass * gravity; }

  void validate() const {
    if (!(mass > 0.0)) throw std::invalid_argument("vehicle mass must be positive");
    if (!(inertia.x > 0.0 && inertia.y > 0.0 && inertia.z > 0.0)) {
      throw std::invalid_argument("inertia must be positive definite");
    }
    if (!(gravity > 0.0)) throw std::invalid_argument("gravity must be positive");
    if (!(thrust_to_weight >= 1.0)) {
      throw std::invalid_argument("max total thrust must be at least the vehicle weight");
    }
    if (linear_drag.x < 0.0 || linear_drag.y < 0.0 || linear_drag.z < 0.0) {
      throw std::invalid_argument("drag coefficients must be nonnegative");
    }
    if (!(flap_frequency > 0.0)) throw std::invalid_argument("flap frequency must be positive");
  }
};

/// Ground-truth rigid-body state. World frame is Z-up; body frame is
/// x-forward, y-left, z-up; `orientation` maps body vectors to world.
struct VehicleState {
  Vec3<double> position{};
  Vec3<double> velocity{};
  Quat<double> orientation{};
  Vec3<double> body_rates{};
  double time{0.0};
  bool landed{false};

  bool operator==(const VehicleState&) const = default;
};

/// Thrust and body torque demand. Produced by the controller at loop rate.
struct ControlCommand {
  double thrust{0.0};      // N, along body +z
  Vec3<double> torque{};   // N m, body frame
  double timestamp{0.0};
};

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

struct StateDerivative {
  Vec3<double> dpos, dvel;
  Quat<double> dq;
  Vec3<double> domega;
};

inline StateDerivative derivative(const VehicleState& s, const ControlCommand& cmd,
                                  const VehicleParams& p) {
  StateDerivative d;
  d.dpos = s.velocity;
  const Vec3<double> thrust_world = s.orientation.rotate({0.0, 0.0, cmd.thrust});
  const Vec3<double> drag = p.linear_drag.cwise(s.velocity);
  d.dvel = (thrust_world - drag) / p.mass - Vec3<double>{0.0, 0.0, p.gravity};
  const Quat<double> omega_q{0.0, s.body_rates.x, s.body_rates.y, s.body_rates.z};
  d.dq = (s.orientation * omega_q) * 0.5;
  const Vec3<double> Iw = p.inertia.cwise(s.body_rates);
  const Vec3<double> net = cmd.torque - s.body_rates.cross(Iw);
  d.domega = {net.x / p.inertia.x, net.y / p.inertia.y, net.z / p.inertia.z};
  return d;
}

inline VehicleState advance(const VehicleState& s, const StateDerivative& d, double h) {
  VehicleState out = s;
  out.position = s.position + d.dpos * h;
  out.velocity = s.velocity + d.dvel * h;
  out.orientation = s.orientation + d.dq * h;
  out.body_rates = s.body_rates + d.domega * h;
  return out;
}

inline bool finite(const VehicleState& s) {
  return all_finite(s.position) && all_finite(s.velocity) && all_finite(s.orientation) &&
         all_finite(s.body_rates) && std::isfinite(s.time);
}

}  // namespace detail

/// World-frame linear acceleration of the vehicle under `cmd`.
inline Vec3<double> world_acceleration(const VehicleState& s, const ControlCommand& cmd,
                                       const VehicleParams& p) {
  return detail::derivative(s, cmd, p).dvel;
}

/// One fixed RK4 step of the cycle-averaged rigid-body model. The command is
/// held constant over the step.
inline VehicleState step_dynamics(const VehicleState& state, const ControlCommand& cmd,
                                  const VehicleParams& params, double dt) {
  if (!(dt > 0.0) || dt > 1.0 / 480.0 + 1e-15) {
    throw DynamicsError("dynamics step must satisfy 0 < dt <= 1/480 s");
  }
  if (!detail::finite(state)) throw DynamicsError("non-finite vehicle state");
  if (!std::isfinite(cmd.thrust) || !all_finite(cmd.torque)) {
    throw DynamicsError("non-finite control command");
  }
  const double fmax = params.max_total_thrust();
  if (cmd.thrust < 0.0 || cmd.thrust > fmax * (1.0 + 1e-12)) {
    throw DynamicsError("thrust command outside [0, max_total_thrust]");
  }

  using detail::advance;
  using detail::derivative;
  const auto k1 = derivative(state, cmd, params);
  const auto k2 = derivative(advance(state, k1, dt / 2), cmd, params);
  const auto k3 = derivative(advance(state, k2, dt / 2), cmd, params);
  const auto k4 = derivative(advance(state, k3, dt), cmd, params);

  VehicleState out = state;
  const double w = dt / 6.0;
  out.position = state.position + (k1.dpos + k2.dpos * 2.0 + k3.dpos * 2.0 + k4.dpos) * w;
  out.velocity = state.velocity + (k1.dvel + k2.dvel * 2.0 + k3.dvel * 2.0 + k4.dvel) * w;
  out.orientation =
      (state.orientation + (k1.dq + k2.dq * 2.0 + k3.dq * 2.0 + k4.dq) * w).normalized();
  out.body_rates =
      state.body_rates + (k1.domega + k2.domega * 2.0 + k3.domega * 2.0 + k4.domega) * w;
  out.time = state.time + dt;

  if (!detail::finite(out)) throw DynamicsError("dynamics produced a non-finite state");
  return out;
}

/// Clamp to the terrain surface on descending contact. A vehicle resting on the
/// ground stays landed until it climbs clear of the surface.
inline VehicleState resolve_ground_contact(const VehicleState& state, const TerrainField& terrain) {
  const double ground = terrain.height(state.position.x, state.position.y);
  VehicleState out = state;
  if (state.position.z < ground && state.velocity.z < 0.0) {
    out.position.z = ground;
    out.velocity = {};
    out.body_rates = {};
    out.landed = true;
  } else if (state.landed && state.position.z > ground) {
    out.landed = false;
  }
  return out;
}

}  // namespace imav
