#include <gtest/gtest.h>

#include <sstream>

#include "imav/mission.hpp"

using namespace imav;

namespace {

HighLevelCommand step(double dx, double t, double dy = 0.0, double dz = 0.0) {
  HighLevelCommand c;
  c.delta = {dx, dy, dz};
  c.timestamp = t;
  return c;
}

// Central finite difference of the trajectory position.
Vec3<double> fd_velocity(const TrajectoryParams& p, double t, double h = 1e-5) {
  return (trajectory_setpoint(p, t + h).position - trajectory_setpoint(p, t - h).position) /
         (2 * h);
}
Vec3<double> fd_accel(const TrajectoryParams& p, double t, double h = 1e-4) {
  return (trajectory_setpoint(p, t + h).position - trajectory_setpoint(p, t).position * 2.0 +
          trajectory_setpoint(p, t - h).position) /
         (h * h);
}

}  // namespace

TEST(Commands, IncrementsAccumulateAtTheRateCap) {
  const CommandLimits lim;
  MissionSetpoint start;
  start.position = {0.0, 0.0, 0.05};
  SetpointTracker tracker(start, lim);
  CommandRateLimiter limiter(lim);
  int released = 0;
  for (int k = 0; k <= 480 * 12; ++k) {
    const double t = k / 480.0;
    if (k % 240 == 0 && t < 10.0) limiter.submit(step(0.05, t));
    if (auto c = limiter.poll(t)) {
      tracker.command(*c);
      ++released;
    }
    tracker.step(1 / 480.0);
  }
  EXPECT_EQ(released, 20);
  EXPECT_NEAR(tracker.target().position.x, 1.0, 1e-12);
  EXPECT_NEAR(tracker.current().position.x, 1.0, 1e-12);
}

TEST(Commands, FastSubmissionsAreCoalescedNotLost) {
  CommandRateLimiter limiter(CommandLimits{});
  std::vector<double> release_times;
  double total = 0.0;
  std::size_t counted = 0;
  for (int k = 0; k <= 480 * 5; ++k) {
    const double t = k / 480.0;
    if (k % 48 == 0 && t < 4.0) limiter.submit(step(0.01, t));  // 10 Hz
    if (auto c = limiter.poll(t)) {
      release_times.push_back(t);
      total += c->delta.x;
      counted += limiter.last_coalesced_count();
    }
  }
  for (std::size_t i = 1; i < release_times.size(); ++i) {
    EXPECT_GE(release_times[i] - release_times[i - 1], 0.5 - 1e-9);
  }
  EXPECT_EQ(counted, 40u);
  EXPECT_NEAR(total, 0.40, 1e-12);
  EXPECT_FALSE(limiter.has_pending());
}

TEST(Commands, OverLimitIsClampedAndFlagged) {
  MissionSetpoint sp;
  sp.position = {0.0, 0.0, 0.02};
  auto r = apply_high_level_command(sp, step(0.2, 0.0, -0.01, -0.5), CommandLimits{});
  EXPECT_EQ(r.status, CommandStatus::Clamped);
  EXPECT_DOUBLE_EQ(r.setpoint.position.x, 0.05);
  EXPECT_DOUBLE_EQ(r.setpoint.position.y, -0.01);
  EXPECT_DOUBLE_EQ(r.setpoint.position.z, 0.0);
  HighLevelCommand bad = step(std::nan(""), 0.0);
  r = apply_high_level_command(sp, bad, CommandLimits{});
  EXPECT_EQ(r.status, CommandStatus::Clamped);
  EXPECT_EQ(r.setpoint.position, sp.position);
}

TEST(Commands, ZeroDeltaLeavesTheSetpointUnchanged) {
  MissionSetpoint sp;
  sp.position = {0.3, -0.1, 0.05};
  sp.yaw = 0.4;
  const auto r = apply_high_level_command(sp, step(0.0, 1.0), CommandLimits{});
  EXPECT_EQ(r.status, CommandStatus::Applied);
  EXPECT_EQ(r.setpoint, sp);
}

TEST(Commands, ModeSwitchTakesEffect) {
  MissionSetpoint sp;
  HighLevelCommand c = step(0.0, 0.0);
  c.mode = AltitudeMode::Absolute;
  EXPECT_EQ(apply_high_level_command(sp, c, CommandLimits{}).setpoint.mode, AltitudeMode::Absolute);
}

TEST(Tracker, SlewsAtTheConfiguredRate) {
  CommandLimits lim;
  SetpointTracker tr(MissionSetpoint{}, lim);
  tr.set_target(MissionSetpoint{{0.3, 0.0, 0.0}});
  const double dt = 1 / 480.0;
  for (int i = 0; i < 480; ++i) tr.step(dt);
  EXPECT_NEAR(tr.current().position.x, lim.slew_rate * 1.0, 1e-12);
  EXPECT_NEAR(tr.current().velocity_ff.x, lim.slew_rate, 1e-15);
  for (int i = 0; i < 480 * 2; ++i) tr.step(dt);
  EXPECT_EQ(tr.current().position.x, 0.3);
  EXPECT_EQ(tr.current().velocity_ff.x, 0.0);
}

TEST(Trajectory, FeedforwardMatchesFiniteDifferences) {
  TrajectoryParams fig;
  fig.kind = TrajectoryKind::FigureEight;
  TrajectoryParams circ;
  circ.kind = TrajectoryKind::Circle;
  circ.period = 3.0;
  circ.ramp = 1.5;
  TrajectoryParams sw;
  sw.kind = TrajectoryKind::SetpointSwitch;
  for (const auto* p : {&fig, &circ, &sw}) {
    for (double t : {0.3, 1.2, 1.9, 2.2, 4.4, 5.0, 6.1}) {
      const auto sp = trajectory_setpoint(*p, t);
      EXPECT_NEAR((sp.velocity_ff - fd_velocity(*p, t)).norm(), 0.0, 1e-7)
          << to_string(p->kind) << " t=" << t;
      EXPECT_NEAR((sp.accel_ff - fd_accel(*p, t)).norm(), 0.0, 1e-4)
          << to_string(p->kind) << " t=" << t;
    }
  }
}

TEST(Trajectory, CircleKeepsItsRadiusAndTangentYaw) {
  TrajectoryParams p;
  p.kind = TrajectoryKind::Circle;
  p.ramp = 1.0;
  const Vec3<double> centre = p.origin - Vec3<double>{p.diameter / 2, 0.0, 0.0};
  for (double t = 0.0; t < 20.0; t += 0.37) {
    const auto sp = trajectory_setpoint(p, t);
    EXPECT_NEAR((sp.position - centre).norm(), p.diameter / 2, 1e-12);
    if (sp.velocity_ff.norm() > 1e-6) {
      EXPECT_NEAR(std::remainder(std::atan2(sp.velocity_ff.y, sp.velocity_ff.x) - sp.yaw, 2 * kPi),
                  0.0, 1e-9);
    }
  }
}

TEST(Trajectory, SwitchVisitsBothEndpoints) {
  TrajectoryParams p;
  p.kind = TrajectoryKind::SetpointSwitch;
  const double t_b = p.dwell + p.transition + 0.5 * p.dwell;
  EXPECT_NEAR(trajectory_setpoint(p, t_b).position.x, p.origin.x + p.separation, 1e-15);
  EXPECT_EQ(trajectory_setpoint(p, 100.0).position, p.origin);
}

TEST(Landing, SequenceDescendsAtTheConfiguredRate) {
  MissionSetpoint sp;
  sp.position = {1.1, 0.05, 0.05};
  const LandingParams lp;
  const auto seq = landing_sequence(sp, 1.1, 0.05, false, lp);
  ASSERT_FALSE(seq.empty());
  EXPECT_NEAR(seq.back().setpoint.position.z, -lp.overshoot, 1e-12);
  for (std::size_t i = 1; i < seq.size(); ++i) {
    const double dz = seq[i - 1].setpoint.position.z - seq[i].setpoint.position.z;
    const double dt = seq[i].t_offset - seq[i - 1].t_offset;
    EXPECT_NEAR(dz, lp.descent_rate * dt, 1e-12);
    EXPECT_EQ(seq[i].setpoint.position.x, 1.1);
  }
  EXPECT_TRUE(landing_sequence(sp, 1.1, 0.05, true).empty());
  EXPECT_THROW(landing_sequence(sp, 1.3, 0.05, false), std::invalid_argument);
}

TEST(Landing, ControllerPausesWhenOffTarget) {
  MissionSetpoint sp;
  sp.position = {1.0, 0.0, 0.05};
  LandingController lc(sp, 1.0, 0.0);
  const auto a = lc.update(1.0, 0.0, 0.1);
  EXPECT_FALSE(lc.paused());
  EXPECT_NEAR(a.position.z, 0.045, 1e-15);
  const auto b = lc.update(1.2, 0.0, 0.1);
  EXPECT_TRUE(lc.paused());
  EXPECT_EQ(b.position.z, a.position.z);
  EXPECT_EQ(b.position.x, 1.0);
}

TEST(Script, RoundTripIsExact) {
  std::vector<HighLevelCommand> cmds;
  for (int i = 0; i < 10; ++i) {
    HighLevelCommand c = step(0.05 / 3 * i, 0.1 * i + 1.0 / 480.0, -1e-17 * i, 0.1);
    c.yaw_delta = 0.3 / 7;
    if (i == 4) c.mode = AltitudeMode::Absolute;
    if (i == 6) c.mode = AltitudeMode::TerrainRelative;
    cmds.push_back(c);
  }
  std::stringstream ss;
  write_command_script(ss, cmds);
  const auto back = parse_command_script(ss);
  ASSERT_EQ(back.size(), cmds.size());
  for (std::size_t i = 0; i < cmds.size(); ++i) {
    EXPECT_EQ(back[i].timestamp, cmds[i].timestamp);
    EXPECT_EQ(back[i].delta, cmds[i].delta);
    EXPECT_EQ(back[i].yaw_delta, cmds[i].yaw_delta);
    EXPECT_EQ(back[i].mode, cmds[i].mode);
  }
}

TEST(Script, ErrorsNameTheLine) {
  std::stringstream bad("# header\n1.0,0,0,0,0\n0.5,0,0,0,0\n");
  try {
    parse_command_script(bad);
    FAIL() << "expected an error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
  std::stringstream junk("1.0,x,0,0,0\n");
  EXPECT_THROW(parse_command_script(junk), std::runtime_error);
  std::stringstream mode("1.0,0,0,0,0,sideways\n");
  EXPECT_THROW(parse_command_script(mode), std::runtime_error);
}

TEST(Trajectory, HoverIsConstant) {
  TrajectoryParams p;
  for (double t : {0.0, 0.5, 3.0, 1e4}) {
    EXPECT_EQ(trajectory_setpoint(p, t).position, (Vec3<double>{0.0, 0.0, 0.05}));
  }
}

TEST(Trajectory, SwitchDwellPointsAreTheSeparationApart) {
  TrajectoryParams p;
  p.kind = TrajectoryKind::SetpointSwitch;
  p.separation = 0.40;
  const auto a = trajectory_setpoint(p, 0.5 * p.dwell).position;
  const auto b = trajectory_setpoint(p, p.dwell + p.transition + 0.5 * p.dwell).position;
  EXPECT_NEAR((b - a).norm(), 0.40, 1e-12);
}

TEST(Trajectory, CircleIsClosed) {
  TrajectoryParams p;
  p.kind = TrajectoryKind::Circle;
  const auto a = trajectory_setpoint(p, 0.0), b = trajectory_setpoint(p, p.period);
  EXPECT_NEAR((a.position - b.position).norm(), 0.0, 1e-12);
  EXPECT_NEAR(std::remainder(a.yaw - b.yaw, 2 * kPi), 0.0, 1e-12);
}
