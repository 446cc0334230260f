#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "imav/config.hpp"

using namespace imav;

TEST(Config, EveryPresetRoundTripsThroughJson) {
  for (const auto& name : preset_names()) {
    const ExperimentConfig c = preset(name);
    EXPECT_TRUE(c.validation_errors().empty()) << name;
    const Json j = to_json(c);
    const ExperimentConfig back = config_from_json(j);
    EXPECT_EQ(to_json(back), j) << name;
    EXPECT_EQ(config_hash(back), config_hash(c)) << name;
  }
}

TEST(Config, HashTracksEveryField) {
  ExperimentConfig a = preset("hover5");
  ExperimentConfig b = a;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = 2;
  EXPECT_NE(config_hash(a), config_hash(b));
  b = a;
  b.estimator.kp = 1.0 + 1e-15;
  EXPECT_NE(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Config, UnknownKeysAreRejected) {
  Json j = to_json(preset("hover5"));
  j["estimator"]["kP"] = 2.0;
  EXPECT_THROW(config_from_json(j), std::invalid_argument);
  Json top = {{"durration", 3.0}};
  EXPECT_THROW(config_from_json(top), std::invalid_argument);
}

TEST(Config, ValidationListsEveryProblem) {
  ExperimentConfig c = preset("hover5");
  c.duration = -1.0;
  c.vehicle.mass = 0.0;
  c.estimator.r_z = 0.0;
  c.thresholds.push_back({"drift_cm", {}, {}});
  const auto errs = c.validation_errors();
  EXPECT_GE(errs.size(), 4u);
  try {
    c.validate();
    FAIL() << "expected validation failure";
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("duration"), std::string::npos);
    EXPECT_NE(msg.find("drift_cm"), std::string::npos);
  }
}

TEST(Config, FileOverlaysAPreset) {
  const auto path = std::filesystem::temp_directory_path() / "imav_overlay_test.json";
  {
    std::ofstream out(path);
    out << R"({"preset": "hover10", "seed": 9, "estimator": {"kp": 0.5}})";
  }
  const ExperimentConfig c = load_config(path.string());
  std::filesystem::remove(path);
  EXPECT_EQ(c.name, "hover10");
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.estimator.kp, 0.5);
  EXPECT_EQ(c.trajectory.origin.z, 0.10);
}

TEST(Config, UnknownPresetOrFileFails) {
  EXPECT_THROW(preset("hover7"), std::invalid_argument);
  EXPECT_THROW(load_config("/nonexistent/config.json"), std::runtime_error);
}

TEST(Config, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
}
