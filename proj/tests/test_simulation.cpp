#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "imav/simulation.hpp"

using namespace imav;

namespace {

ExperimentConfig short_hover(double duration = 3.0) {
  ExperimentConfig c = preset("hover5");
  c.duration = c.trajectory.duration = duration;
  return c;
}

}  // namespace

TEST(Simulation, LogsOneRowPerTickAtTheBaseRate) {
  const auto res = run_experiment(short_hover(4.0));
  ASSERT_FALSE(res.abort);
  ASSERT_EQ(res.log.rows.size(), 4u * 480u);
  for (std::size_t i = 0; i < res.log.rows.size(); ++i) {
    ASSERT_EQ(res.log.rows[i].t, static_cast<double>(i) / 480.0);
  }
}

TEST(Simulation, SameSeedIsDeterministicAndSeedsDiffer) {
  ExperimentConfig c = short_hover();
  const auto a = run_experiment(c);
  const auto b = run_experiment(c);
  EXPECT_EQ(a.log.hash(), b.log.hash());
  c.seed = 2;
  EXPECT_NE(run_experiment(c).log.hash(), a.log.hash());
}

TEST(Simulation, InvalidConfigIsRejectedBeforeRunning) {
  ExperimentConfig c = short_hover();
  c.vehicle.mass = -1.0;
  c.estimator.q_accel = 0.0;
  EXPECT_THROW(Simulation<double>{c}, std::invalid_argument);
}

TEST(Simulation, NonFiniteValueAbortsWithTheTick) {
  ExperimentConfig c = short_hover();
  c.estimator.kp = INFINITY;  // first accelerometer correction becomes NaN
  Simulation<double> sim(c);
  sim.run();
  ASSERT_TRUE(sim.aborted());
  EXPECT_EQ(sim.aborted()->tick, 0u);
  ASSERT_EQ(sim.log().rows.size(), 1u);
  EXPECT_FALSE(std::isfinite(sim.log().rows[0].est_qw));
  EXPECT_FALSE(sim.finish_log().metadata.at("abort").is_null());
}

TEST(Simulation, CovariancesStayHealthy) {
  const auto res = run_experiment(short_hover(12.0));
  const double ceiling = EstimatorConfig{}.cov_ceiling;
  for (const auto& r : res.log.rows) {
    for (auto [a, b, c] : {std::tuple{r.alt_p00, r.alt_p01, r.alt_p11},
                           std::tuple{r.latx_p00, r.latx_p01, r.latx_p11},
                           std::tuple{r.laty_p00, r.laty_p01, r.laty_p11}}) {
      ASSERT_TRUE(std::isfinite(a) && std::isfinite(b) && std::isfinite(c)) << "t " << r.t;
      ASSERT_GE(a, 0.0);
      ASSERT_GE(c, 0.0);
      ASSERT_GE(a * c - b * b, -1e-30);
      ASSERT_LE(std::max(a, c), ceiling);
    }
  }
}

TEST(Simulation, ZeroDurationHasNoDivergence) {
  ExperimentConfig c = short_hover();
  c.duration = 0.0;
  const auto res = run_experiment(c);
  EXPECT_TRUE(res.log.rows.empty());
  EXPECT_TRUE(res.metrics.valid());
  const auto d = compare_precision_runs(c);
  EXPECT_EQ(d.ticks, 0u);
  EXPECT_EQ(d.max_est_position_cm, 0.0);
  EXPECT_EQ(d.max_est_attitude_deg, 0.0);
}

TEST(Simulation, SinkHoldsAFullRunUntilFlushed) {
  std::ostringstream out;
  Simulation<double> sim(short_hover(12.0));
  sim.attach_sink(out);
  const std::size_t header = out.str().size();
  sim.run();
  EXPECT_EQ(out.str().size(), header);
  sim.flush_sink();
  std::istringstream in(out.str());
  EXPECT_EQ(FlightLog::read_csv(in).rows, sim.log().rows);
}

TEST(Precision, ModeIsFixedOnceTheRunStarts) {
  ExperimentRunner r(short_hover());
  r.set_precision_mode(Precision::Single);
  EXPECT_EQ(r.precision_mode(), Precision::Single);
  r.step();
  EXPECT_THROW(r.set_precision_mode(Precision::Double), std::logic_error);
  r.run();
  EXPECT_EQ(r.result().log.metadata.at("precision"), "single");
}

TEST(Replay, IdenticalGainsReproduceTheEstimatesBitForBit) {
  for (Precision p : {Precision::Double, Precision::Single}) {
    ExperimentConfig c = short_hover();
    c.precision = p;
    const auto res = run_experiment(c);
    const auto rep = replay_estimator(res.log);
    ASSERT_EQ(rep.rows.size(), res.log.rows.size());
    EXPECT_TRUE(rep.rows == res.log.rows) << to_string(p);
  }
}

TEST(Replay, ZeroProportionalGainDriftsAtTheGyroBias) {
  ExperimentConfig c = preset("hover5-ideal");
  c.noise.gyro_bias = {0.01, -0.005, 0.02};
  c.calibration.samples = 0;  // the estimator starts with no bias knowledge
  const auto res = run_experiment(c);
  ASSERT_FALSE(res.abort);
  EstimatorConfig g = c.estimator;
  g.kp = 0.0;
  g.ki = 0.0;
  const auto rep = replay_estimator(res.log, g);
  const Vec3<double>& b = c.noise.gyro_bias;
  for (const auto& r : rep.rows) {
    ASSERT_NEAR(r.est_wx - r.true_wx, b.x, 1e-9);
    ASSERT_NEAR(r.est_wy - r.true_wy, b.y, 1e-9);
    ASSERT_NEAR(r.est_wz - r.true_wz, b.z, 1e-9);
  }
  const auto& last = rep.rows.back();
  const double angle = Quat<double>::angle_between(detail::true_q(last), detail::est_q(last));
  EXPECT_NEAR(angle, b.norm() * last.t, 0.03 * b.norm() * last.t);
  // The closed-loop filter itself stays level.
  EXPECT_LT(res.metrics.att_rms_deg, rad2deg(b.z * last.t));
}

TEST(Mission, HoldsTheLastSetpointThroughSilence) {
  ExperimentConfig c = preset("hover5");
  c.mission.enabled = true;
  c.duration = 35.0;
  Simulation<double> sim(c);
  const Vec3<double> start = sim.truth().position;
  sim.run();
  ASSERT_FALSE(sim.aborted());
  EXPECT_FALSE(sim.truth().landed);
  EXPECT_EQ(sim.setpoint().position, start);
  EXPECT_LT(std::hypot(sim.truth().position.x - start.x, sim.truth().position.y - start.y), 0.05);
  EXPECT_NEAR(sim.truth().position.z, start.z, 0.01);
}

TEST(Mission, LiveCommandRecordReplaysBitExactly) {
  ExperimentConfig c = preset("mission15s");
  c.mission.commands.clear();
  Simulation<double> live(c);
  int k = 0;
  while (!live.done()) {
    // Bursts faster than the rate cap plus an occasional over-limit step.
    if (k >= 480 && k % 120 == 0 && k < 480 * 13) {
      HighLevelCommand cmd;
      cmd.source = CommandSource::Operator;
      cmd.delta = {0.02, k == 960 ? 0.05 : 0.0, k == 2400 ? 0.2 : 0.0};
      live.submit_command(cmd);
      if (k % 360 == 0) live.submit_command(cmd);
    }
    live.step();
    ++k;
  }
  ASSERT_FALSE(live.aborted());
  ASSERT_GE(live.command_events().size(), 10u);
  bool coalesced = false, clamped = false;
  for (const auto& e : live.command_events()) {
    coalesced = coalesced || e.coalesced > 1;
    clamped = clamped || e.status == CommandStatus::Clamped;
  }
  EXPECT_TRUE(coalesced);
  EXPECT_TRUE(clamped);

  const auto path = std::filesystem::temp_directory_path() / "imav_record_test.csv";
  {
    std::ofstream out(path);
    write_command_script(out, live.command_record());
  }
  ExperimentConfig replay = c;
  replay.mission.command_file = path.string();
  Simulation<double> again(replay);
  again.run();
  std::filesystem::remove(path);
  EXPECT_TRUE(again.log().rows == live.log().rows);
}

TEST(Mission, ScriptedFastMissionLandsOnTheFlower) {
  const auto res = run_experiment(preset("mission15s"));
  ASSERT_FALSE(res.abort);
  ASSERT_TRUE(res.metrics.touchdown_error_cm);
  EXPECT_LT(*res.metrics.touchdown_error_cm, 2.0);
  EXPECT_GE(*res.metrics.course_length_m, 1.0);
}

TEST(Thresholds, MissingOrNonFiniteValuesFail) {
  MetricsReport m;
  m.lateral_rms_cm = 1.0;
  const auto r = check_thresholds(m, {{"lateral_rms_cm", 2.0, {}},
                                      {"lateral_rms_cm", {}, 1.5},
                                      {"touchdown_error_cm", 2.0, {}}});
  EXPECT_TRUE(r[0].pass);
  EXPECT_FALSE(r[1].pass);
  EXPECT_FALSE(r[2].pass);
}

TEST(Simulation, HoverAltitudeEstimateTracksTruth) {
  const auto res = run_experiment(preset("hover5"));
  std::vector<double> err;
  for (const auto& r : res.log.rows) err.push_back((r.est_z - (r.true_z - r.terrain_h)) * 100.0);
  EXPECT_LE(rms(err), 0.2);
}

TEST(Simulation, ZeroNoiseHoverTracksBelowAMillimetre) {
  const auto res = run_experiment(preset("hover5-ideal"));
  EXPECT_LT(res.metrics.lateral_rms_cm, 0.1);
  EXPECT_LT(res.metrics.altitude_rms_cm, 0.1);
}

TEST(Simulation, FortyCentimetreStepSettlesWithinTwoSeconds) {
  const ExperimentConfig c = preset("setpoint40");
  const auto res = run_experiment(c);
  const double start = c.trajectory.dwell;
  const double target = c.trajectory.origin.x + c.trajectory.separation;
  double peak = 0.0;
  for (const auto& r : res.log.rows) {
    peak = std::max(peak, std::hypot(r.true_vx, r.true_vy) * 100.0);
    if (r.t >= start + 2.0 && r.t < start + c.trajectory.transition + c.trajectory.dwell) {
      // Settled on the estimate; the truth keeps the dead-reckoning offset
      // accumulated while the flow was too fast to track.
      ASSERT_LT(std::hypot(r.est_x - target, r.est_y - c.trajectory.origin.y), 0.01) << r.t;
      ASSERT_LT(std::hypot(r.true_vx, r.true_vy), 0.03) << r.t;
      ASSERT_LT(std::hypot(r.true_x - target, r.true_y - c.trajectory.origin.y), 0.06) << r.t;
    }
  }
  EXPECT_GE(peak, 68.4 * 0.7);
  EXPECT_LE(peak, 68.4 * 1.3);
}

TEST(Precision, DefaultIsDouble) { EXPECT_EQ(ExperimentConfig{}.precision, Precision::Double); }

TEST(Precision, DualRunCommandsAndEstimatesStayClose) {
  const auto d = compare_precision_runs(preset("setpoint40"));
  EXPECT_EQ(d.ticks, 7u * 480u);
  EXPECT_LT(d.max_thrust_n, 1e-3);
  EXPECT_LT(d.max_est_position_cm, 0.1);
}

TEST(Precision, SingleModeHover) {
  ExperimentConfig c = preset("hover5");
  c.precision = Precision::Single;
  c.duration = c.trajectory.duration = 10.0;
  const auto res = run_experiment(c);
  ASSERT_FALSE(res.abort);
  EXPECT_LE(res.metrics.lateral_rms_cm, 2.17 * 1.5);
  EXPECT_LE(res.metrics.altitude_rms_cm, 0.32 * 2.0);
}

TEST(Mission, ThirtySecondFlightEndsLandedOnTheFlower) {
  const ExperimentConfig c = preset("mission30s");
  Simulation<double> sim(c);
  sim.run();
  ASSERT_FALSE(sim.aborted());
  const auto& tr = sim.truth();
  EXPECT_TRUE(tr.landed);
  EXPECT_LT(std::hypot(tr.position.x - 1.10, tr.position.y), 0.05);
  EXPECT_NEAR(tr.position.z, 0.04, 1e-9);
}

TEST(Mission, DescentFromTenCentimetresTakesAboutTwoAndAHalfSeconds) {
  ExperimentConfig c = preset("hover5");
  c.terrain = {FlatPlane{0.0}, FlowerDisk{0.3, 0.0, 0.05, 0.04}};
  c.initial.position = {0.3, 0.0, 0.10};
  c.trajectory.origin = c.initial.position;
  c.mission.enabled = true;
  c.mission.landing = {true, 3.0, 0.3, 0.0, {}};
  c.duration = c.trajectory.duration = 8.0;
  const auto res = run_experiment(c);
  ASSERT_FALSE(res.abort);
  ASSERT_TRUE(res.metrics.touchdown_time_s);
  const double descent = *res.metrics.touchdown_time_s - 3.0;
  EXPECT_GE(descent, 2.5 * 0.8);
  EXPECT_LE(descent, 2.5 * 1.2);
}
