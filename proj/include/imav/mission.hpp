#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "imav/controller.hpp"
#include "imav/math.hpp"
#include "imav/terrain.hpp"

namespace imav {

// ---------------------------------------------------------------------------
// Trajectories

enum class TrajectoryKind { Hover, SetpointSwitch, FigureEight, Circle };

inline TrajectoryKind parse_trajectory_kind(const std::string& s) {
  if (s == "hover") return TrajectoryKind::Hover;
  if (s == "setpoint-switch") return TrajectoryKind::SetpointSwitch;
  if (s == "figure-eight") return TrajectoryKind::FigureEight;
  if (s == "circle") return TrajectoryKind::Circle;
  throw std::invalid_argument("unknown trajectory kind: " + s);
}

inline const char* to_string(TrajectoryKind k) {
  switch (k) {
    case TrajectoryKind::Hover: return "hover";
    case TrajectoryKind::SetpointSwitch: return "setpoint-switch";
    case TrajectoryKind::FigureEight: return "figure-eight";
    case TrajectoryKind::Circle: return "circle";
  }
  return "?";
}

struct TrajectoryParams {
  TrajectoryKind kind{TrajectoryKind::Hover};
  Vec3<double> origin{0.0, 0.0, 0.05};
  double duration{12.0};
  // setpoint-switch: A -> B -> A along `switch_axis` (unit vector).
  double separation{0.40};
  Vec3<double> switch_axis{1.0, 0.0, 0.0};
  double dwell{1.5};
  double transition{1.1};
  // figure-eight: vertical-plane Lissajous, width x height.
  double width{0.22};
  double height{0.10};
  double period{7.0};
  // circle: horizontal, tangent yaw; `ramp` seconds of uniform angular
  // acceleration before the steady rate.
  double diameter{0.18};
  double ramp{0.0};

  void validate() const {
    if (!(duration >= 0.0)) throw std::invalid_argument("trajectory duration must be >= 0");
    if (!(period > 0.0) || !(transition > 0.0) || dwell < 0.0 || ramp < 0.0) {
      throw std::invalid_argument("trajectory timing parameters must be positive");
    }
  }
};

namespace detail {

// Minimum-jerk blend s(u), u in [0,1], with first and second derivatives.
inline void min_jerk(double u, double& s, double& ds, double& dds) {
  u = clamp(u, 0.0, 1.0);
  const double u2 = u * u, u3 = u2 * u;
  s = u3 * (10.0 - 15.0 * u + 6.0 * u2);
  ds = 30.0 * u2 * (1.0 - u) * (1.0 - u);
  dds = 60.0 * u * (1.0 - u) * (1.0 - 2.0 * u);
}

}  // namespace detail

/// Setpoint (with analytic velocity/acceleration feedforward) at time t.
inline MissionSetpoint trajectory_setpoint(const TrajectoryParams& p, double t) {
  MissionSetpoint sp;
  sp.mode = AltitudeMode::TerrainRelative;
  sp.position = p.origin;
  switch (p.kind) {
    case TrajectoryKind::Hover:
      break;
    case TrajectoryKind::SetpointSwitch: {
      // dwell at A, move to B, dwell at B, move back to A, dwell.
      const double t1 = p.dwell, t2 = t1 + p.transition;
      const double t3 = t2 + p.dwell, t4 = t3 + p.transition;
      double s = 0, ds = 0, dds = 0, dir = 1.0, base = 0.0;
      if (t < t1) {
        s = 0;
      } else if (t < t2) {
        detail::min_jerk((t - t1) / p.transition, s, ds, dds);
      } else if (t < t3) {
        s = 1;
      } else if (t < t4) {
        detail::min_jerk((t - t3) / p.transition, s, ds, dds);
        dir = -1.0;
        base = 1.0;
      } else {
        s = 0;
        base = 0.0;
        dir = 1.0;
      }
      const double frac = base + dir * s;
      const double d = p.separation;
      sp.position = p.origin + p.switch_axis * (d * frac);
      sp.velocity_ff = p.switch_axis * (dir * d * ds / p.transition);
      sp.accel_ff = p.switch_axis * (dir * d * dds / (p.transition * p.transition));
      break;
    }
    case TrajectoryKind::FigureEight: {
      const double w = 2.0 * kPi / p.period;
      const double a = p.width / 2.0, b = p.height / 2.0;
      sp.position = p.origin + Vec3<double>{a * std::sin(w * t), 0.0, b * std::sin(2.0 * w * t)};
      sp.velocity_ff = {a * w * std::cos(w * t), 0.0, 2.0 * b * w * std::cos(2.0 * w * t)};
      sp.accel_ff = {-a * w * w * std::sin(w * t), 0.0,
                     -4.0 * b * w * w * std::sin(2.0 * w * t)};
      break;
    }
    case TrajectoryKind::Circle: {
      const double w = 2.0 * kPi / p.period;
      const double r = p.diameter / 2.0;
      double th = w * t, wt = w, alpha = 0.0;
      if (p.ramp > 0.0) {
        if (t < p.ramp) {
          alpha = w / p.ramp;
          wt = alpha * t;
          th = 0.5 * alpha * t * t;
        } else {
          th = w * (t - 0.5 * p.ramp);
        }
      }
      // Circle centred at origin - (r, 0): starts at origin heading +y.
      sp.position = p.origin + Vec3<double>{r * std::cos(th) - r, r * std::sin(th), 0.0};
      const double c = std::cos(th), s = std::sin(th);
      sp.velocity_ff = {-r * wt * s, r * wt * c, 0.0};
      sp.accel_ff = {-r * wt * wt * c - r * alpha * s, -r * wt * wt * s + r * alpha * c, 0.0};
      sp.yaw = std::remainder(th + kPi / 2.0, 2.0 * kPi);
      sp.yaw_rate_ff = wt;
      break;
    }
  }
  return sp;
}

// ---------------------------------------------------------------------------
// High-level commands

enum class CommandSource { Operator, Scripted };

struct HighLevelCommand {
  Vec3<double> delta{};    // m
  double yaw_delta{0.0};   // rad
  double timestamp{0.0};   // s
  CommandSource source{CommandSource::Scripted};
  std::optional<AltitudeMode> mode;
};

struct CommandLimits {
  double max_step{0.05};       // m per axis per command
  double max_yaw_step{0.3};    // rad per command
  double max_rate{2.0};        // Hz
  double slew_rate{0.15};      // m/s the tracked setpoint may move
  double yaw_slew_rate{0.6};   // rad/s
};

enum class CommandStatus { Applied, Clamped };

inline const char* to_string(CommandStatus s) {
  return s == CommandStatus::Applied ? "applied" : "clamped";
}

struct CommandResult {
  MissionSetpoint setpoint;
  CommandStatus status{CommandStatus::Applied};
  HighLevelCommand applied;  // after clamping
};

/// Increments the commanded setpoint. Over-limit deltas are clamped and
/// flagged; the result never moves more than max_step per axis.
inline CommandResult apply_high_level_command(const MissionSetpoint& sp,
                                              const HighLevelCommand& cmd,
                                              const CommandLimits& limits) {
  CommandResult r;
  r.applied = cmd;
  bool clamped = false;
  auto lim = [&](double v, double m) {
    if (!std::isfinite(v)) {
      clamped = true;
      return 0.0;
    }
    if (std::abs(v) > m) {
      clamped = true;
      return std::copysign(m, v);
    }
    return v;
  };
  r.applied.delta = {lim(cmd.delta.x, limits.max_step), lim(cmd.delta.y, limits.max_step),
                     lim(cmd.delta.z, limits.max_step)};
  r.applied.yaw_delta = lim(cmd.yaw_delta, limits.max_yaw_step);
  r.setpoint = sp;
  r.setpoint.position += r.applied.delta;
  if (r.setpoint.position.z < 0.0) {
    r.setpoint.position.z = 0.0;
    clamped = true;
  }
  r.setpoint.yaw = std::remainder(sp.yaw + r.applied.yaw_delta, 2.0 * kPi);
  if (cmd.mode) r.setpoint.mode = *cmd.mode;
  r.status = clamped ? CommandStatus::Clamped : CommandStatus::Applied;
  return r;
}

/// Holds the operator's commanded setpoint and the slew-limited setpoint the
/// low-level loop tracks. Advanced once per control tick.
class SetpointTracker {
 public:
  SetpointTracker(MissionSetpoint initial, CommandLimits limits)
      : target_(initial), current_(initial), limits_(limits) {}

  CommandResult command(const HighLevelCommand& cmd) {
    CommandResult r = apply_high_level_command(target_, cmd, limits_);
    if (cmd.mode && *cmd.mode != target_.mode) current_.mode = *cmd.mode;
    target_ = r.setpoint;
    return r;
  }

  /// Replace the target outright (landing schedule, reset).
  void set_target(const MissionSetpoint& sp) { target_ = sp; }
  void snap_to(const MissionSetpoint& sp) { target_ = current_ = sp; }

  const MissionSetpoint& step(double dt) {
    Vec3<double> diff = target_.position - current_.position;
    const double dist = diff.norm();
    const double max_move = limits_.slew_rate * dt;
    if (dist > max_move) {
      const Vec3<double> dir = diff / dist;
      current_.position += dir * max_move;
      current_.velocity_ff = dir * limits_.slew_rate;
    } else {
      current_.position = target_.position;
      current_.velocity_ff = {};
    }
    const double dyaw = std::remainder(target_.yaw - current_.yaw, 2.0 * kPi);
    const double max_yaw = limits_.yaw_slew_rate * dt;
    if (std::abs(dyaw) > max_yaw) {
      current_.yaw = std::remainder(current_.yaw + std::copysign(max_yaw, dyaw), 2.0 * kPi);
      current_.yaw_rate_ff = std::copysign(limits_.yaw_slew_rate, dyaw);
    } else {
      current_.yaw = target_.yaw;
      current_.yaw_rate_ff = 0.0;
    }
    current_.mode = target_.mode;
    current_.accel_ff = {};
    return current_;
  }

  const MissionSetpoint& target() const { return target_; }
  const MissionSetpoint& current() const { return current_; }
  const CommandLimits& limits() const { return limits_; }

 private:
  MissionSetpoint target_;
  MissionSetpoint current_;
  CommandLimits limits_;
};

/// Enforces the command rate cap. Commands arriving faster than max_rate are
/// coalesced (deltas summed) and released at the next allowed instant.
class CommandRateLimiter {
 public:
  explicit CommandRateLimiter(CommandLimits limits) : limits_(limits) {}

  void submit(const HighLevelCommand& cmd) {
    if (!pending_) {
      pending_ = cmd;
      pending_count_ = 1;
      return;
    }
    pending_->delta += cmd.delta;
    pending_->yaw_delta += cmd.yaw_delta;
    if (cmd.mode) pending_->mode = cmd.mode;
    pending_->timestamp = cmd.timestamp;
    ++pending_count_;
  }

  /// The coalesced command releasable at time t, if any.
  std::optional<HighLevelCommand> poll(double t) {
    if (!pending_) return std::nullopt;
    const double min_gap = 1.0 / limits_.max_rate;
    if (last_release_ && t - *last_release_ < min_gap - 1e-9) return std::nullopt;
    HighLevelCommand out = *pending_;
    out.timestamp = t;
    pending_.reset();
    last_count_ = pending_count_;
    pending_count_ = 0;
    last_release_ = t;
    return out;
  }

  std::size_t last_coalesced_count() const { return last_count_; }
  bool has_pending() const { return pending_.has_value(); }

 private:
  CommandLimits limits_;
  std::optional<HighLevelCommand> pending_;
  std::size_t pending_count_{0};
  std::size_t last_count_{0};
  std::optional<double> last_release_;
};

// ---------------------------------------------------------------------------
// Scripted command files: one command per line,
//   time,dx,dy,dz,dyaw[,mode]
// '#' starts a comment. mode is "absolute" or "terrain".

inline std::vector<HighLevelCommand> parse_command_script(std::istream& in) {
  std::vector<HighLevelCommand> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.resize(pos);
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 5 || fields.size() > 6) {
      throw std::runtime_error("command script line " + std::to_string(lineno) +
                               ": expected time,dx,dy,dz,dyaw[,mode]");
    }
    HighLevelCommand c;
    try {
      c.timestamp = std::stod(fields[0]);
      c.delta = {std::stod(fields[1]), std::stod(fields[2]), std::stod(fields[3])};
      c.yaw_delta = std::stod(fields[4]);
    } catch (const std::exception&) {
      throw std::runtime_error("command script line " + std::to_string(lineno) +
                               ": malformed number");
    }
    if (fields.size() == 6) {
      std::string m = fields[5];
      m.erase(0, m.find_first_not_of(" \t"));
      m.erase(m.find_last_not_of(" \t\r") + 1);
      if (m == "absolute") c.mode = AltitudeMode::Absolute;
      else if (m == "terrain") c.mode = AltitudeMode::TerrainRelative;
      else if (!m.empty()) {
        throw std::runtime_error("command script line " + std::to_string(lineno) +
                                 ": unknown mode '" + m + "'");
      }
    }
    c.source = CommandSource::Scripted;
    if (!out.empty() && c.timestamp < out.back().timestamp) {
      throw std::runtime_error("command script line " + std::to_string(lineno) +
                               ": timestamps must be nondecreasing");
    }
    out.push_back(c);
  }
  return out;
}

inline std::vector<HighLevelCommand> load_command_script(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open command script: " + path);
  return parse_command_script(in);
}

inline void write_command_script(std::ostream& out, const std::vector<HighLevelCommand>& cmds) {
  out << "# time,dx,dy,dz,dyaw,mode\n";
  char buf[256];
  for (const auto& c : cmds) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,", c.timestamp, c.delta.x,
                  c.delta.y, c.delta.z, c.yaw_delta);
    out << buf;
    if (c.mode) out << (*c.mode == AltitudeMode::Absolute ? "absolute" : "terrain");
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Landing

struct LandingParams {
  double descent_rate{0.05};       // m/s
  double max_lateral_error{0.05};  // m
  double overshoot{0.02};          // m below the surface the schedule continues to
  double schedule_dt{0.1};         // s between schedule entries
};

struct ScheduledSetpoint {
  double t_offset{0.0};
  MissionSetpoint setpoint;
};

/// Nominal descent schedule from sp straight down onto the target (x, y).
/// Empty when already landed. Throws when the start is too far off target.
inline std::vector<ScheduledSetpoint> landing_sequence(const MissionSetpoint& sp, double target_x,
                                                       double target_y, bool landed,
                                                       const LandingParams& p = {}) {
  if (landed) return {};
  const double lateral = std::hypot(sp.position.x - target_x, sp.position.y - target_y);
  if (lateral > p.max_lateral_error) {
    throw std::invalid_argument("landing requires the vehicle within the lateral tolerance");
  }
  std::vector<ScheduledSetpoint> out;
  const double z0 = sp.position.z;
  const double total = (z0 + p.overshoot) / p.descent_rate;
  const int n = static_cast<int>(std::ceil(total / p.schedule_dt));
  for (int i = 0; i <= n; ++i) {
    const double t = std::min(i * p.schedule_dt, total);
    ScheduledSetpoint s;
    s.t_offset = t;
    s.setpoint = sp;
    s.setpoint.position = {target_x, target_y, z0 - p.descent_rate * t};
    s.setpoint.velocity_ff = {0.0, 0.0, t < total ? -p.descent_rate : 0.0};
    out.push_back(s);
  }
  return out;
}

/// Runtime descent: follows the schedule but pauses (holds height) whenever
/// the lateral estimate drifts beyond the tolerance.
class LandingController {
 public:
  LandingController(const MissionSetpoint& start, double target_x, double target_y,
                    LandingParams p = {})
      : start_(start), tx_(target_x), ty_(target_y), p_(p), z_(start.position.z) {}

  MissionSetpoint update(double est_x, double est_y, double dt) {
    const double lateral = std::hypot(est_x - tx_, est_y - ty_);
    paused_ = lateral > p_.max_lateral_error;
    MissionSetpoint sp = start_;
    sp.position.x = tx_;
    sp.position.y = ty_;
    sp.velocity_ff = {};
    if (!paused_ && z_ > -p_.overshoot) {
      z_ = std::max(-p_.overshoot, z_ - p_.descent_rate * dt);
      sp.velocity_ff.z = z_ > -p_.overshoot ? -p_.descent_rate : 0.0;
    }
    sp.position.z = z_;
    return sp;
  }

  bool paused() const { return paused_; }

 private:
  MissionSetpoint start_;
  double tx_, ty_;
  LandingParams p_;
  double z_;
  bool paused_{false};
};

}  // namespace imav
