#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "imav/math.hpp"
#include "imav/terrain.hpp"
#include "imav/vehicle.hpp"

namespace imav {

struct ImuSample {
  double timestamp{0.0};
  Vec3<double> gyro{};   // rad/s, body frame
  Vec3<double> accel{};  // m/s^2 specific force, body frame
};

struct TofSample {
  double timestamp{0.0};
  double distance{0.0};  // m along body -z
  bool valid{false};
};

struct FlowSample {
  double timestamp{0.0};
  std::array<double, 2> flow{0.0, 0.0};  // counts accumulated over the frame interval
  double quality{0.0};                   // [0, 1]; 0 means unusable
};

/// Noise, bias and geometry parameters of the emulated sensor suite. All
/// magnitudes are calibration values; zeroing every noise term (and the bias)
/// yields exact geometric measurements.
struct NoiseConfig {
  double gyro_noise_density{4e-4};     // rad/s/sqrt(Hz)
  Vec3<double> gyro_bias{};            // rad/s, constant per run
  double accel_noise_density{2e-3};    // m/s^2/sqrt(Hz)
  double vibration_amplitude{0.05};    // m/s^2 at flap frequency, full-thrust scale
  double tof_noise_std{1e-3};          // m
  double flow_noise_std{0.35};         // counts at flow_noise_ref_height
  double flow_noise_ref_height{0.05};  // m
  double flow_quantum{1.0};            // counts; 0 disables quantization
  double flow_focal_scale{400.0};      // counts per rad
  std::uint64_t rng_seed{1};

  static NoiseConfig noiseless() {
    NoiseConfig c;
    c.gyro_noise_density = 0.0;
    c.gyro_bias = {};
    c.accel_noise_density = 0.0;
    c.vibration_amplitude = 0.0;
    c.tof_noise_std = 0.0;
    c.flow_noise_std = 0.0;
    c.flow_quantum = 0.0;
    return c;
  }

  void validate() const {
    if (gyro_noise_density < 0 || accel_noise_density < 0 || vibration_amplitude < 0 ||
        tof_noise_std < 0 || flow_noise_std < 0 || flow_quantum < 0) {
      throw std::invalid_argument("noise magnitudes must be nonnegative");
    }
    if (!(flow_focal_scale > 0) || !(flow_noise_ref_height > 0)) {
      throw std::invalid_argument("flow focal scale and reference height must be positive");
    }
  }
};

struct SensorRates {
  double base{480.0};
  double imu{480.0};
  double tof{240.0};
  double flow{120.0};

  void validate() const {
    for (double r : {imu, tof, flow}) {
      if (!(r > 0.0) || r > base) throw std::invalid_argument("sensor rates must be in (0, base]");
    }
  }
};

struct SensorGeometry {
  double tof_max_range{0.6};                  // m
  double tof_max_tilt{deg2rad(45.0)};         // rad
  double flow_min_height{0.005};              // m
  double flow_quality_height{1.0};            // m, quality reaches zero here
  double flow_quality_rate{8.0};              // rad/s of image motion where quality reaches zero
};

enum class SensorId : std::uint8_t { Imu = 0, Tof = 1, Flow = 2 };

struct DueSensors {
  bool imu{false}, tof{false}, flow{false};
  bool any() const { return imu || tof || flow; }
};

/// Fires each sensor at its own rate against the fixed base tick. Sample n of a
/// sensor is due at the first tick whose time is >= n / rate, so long runs emit
/// exactly floor(T * rate) (+1 for t = 0) samples with no drops or duplicates.
class SensorScheduler {
 public:
  explicit SensorScheduler(SensorRates rates) : rates_(rates) { rates_.validate(); }

  DueSensors due(double t) {
    DueSensors d;
    d.imu = take(0, rates_.imu, t);
    d.tof = take(1, rates_.tof, t);
    d.flow = take(2, rates_.flow, t);
    return d;
  }

  std::vector<SensorId> due_list(double t) {
    const DueSensors d = due(t);
    std::vector<SensorId> out;
    if (d.imu) out.push_back(SensorId::Imu);
    if (d.tof) out.push_back(SensorId::Tof);
    if (d.flow) out.push_back(SensorId::Flow);
    return out;
  }

  const SensorRates& rates() const { return rates_; }

 private:
  bool take(int i, double rate, double t) {
    const double next = static_cast<double>(count_[i]) / rate;
    if (next <= t + 1e-9) {
      ++count_[i];
      return true;
    }
    return false;
  }

  SensorRates rates_;
  std::array<std::uint64_t, 3> count_{0, 0, 0};
};

namespace detail {

// splitmix64; derives independent per-sensor seeds from the master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// One seeded engine with its own normal distribution (the distribution caches
// draws, so it must not be shared between engines).
class GaussianStream {
 public:
  explicit GaussianStream(std::uint64_t seed) : rng_(seed) {}
  double next() { return dist_(rng_); }
  Vec3<double> vec3(double sigma) {
    const double a = next(), b = next(), c = next();
    return {a * sigma, b * sigma, c * sigma};
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_{0.0, 1.0};
};

}  // namespace detail

/// Stateful sensor suite: one pseudorandom stream per sensor, all derived from
/// NoiseConfig::rng_seed, so identical configs reproduce identical streams.
class SensorSuite {
 public:
  SensorSuite(NoiseConfig cfg, SensorRates rates, SensorGeometry geom, double flap_frequency)
      : cfg_(cfg), rates_(rates), geom_(geom), flap_frequency_(flap_frequency),
        imu_rng_(detail::mix_seed(cfg.rng_seed ^ 0x1111)),
        tof_rng_(detail::mix_seed(cfg.rng_seed ^ 0x2222)),
        flow_rng_(detail::mix_seed(cfg.rng_seed ^ 0x3333)) {
    cfg_.validate();
    rates_.validate();
  }

  /// `accel_world` is the true world-frame acceleration; `thrust_fraction`
  /// (F / F_max) scales the flapping vibration.
  ImuSample sample_imu(const VehicleState& truth, const Vec3<double>& accel_world, double t,
                       double thrust_fraction = 0.0) {
    ImuSample s;
    s.timestamp = t;
    const double gyro_sigma = cfg_.gyro_noise_density * std::sqrt(rates_.imu);
    const double accel_sigma = cfg_.accel_noise_density * std::sqrt(rates_.imu);
    s.gyro = truth.body_rates + cfg_.gyro_bias;
    const Vec3<double> specific = accel_world + Vec3<double>{0.0, 0.0, gravity_};
    s.accel = truth.orientation.rotate_inverse(specific);
    if (cfg_.vibration_amplitude > 0.0) {
      const double vib = cfg_.vibration_amplitude * clamp(thrust_fraction, 0.0, 1.0) *
                         std::sin(2.0 * kPi * flap_frequency_ * t);
      s.accel.z += vib;
      s.gyro.x += 0.1 * vib;
    }
    if (gyro_sigma > 0.0) s.gyro += imu_rng_.vec3(gyro_sigma);
    if (accel_sigma > 0.0) s.accel += imu_rng_.vec3(accel_sigma);
    return s;
  }

  TofSample sample_tof(const VehicleState& truth, const TerrainField& terrain, double t) {
    TofSample s;
    s.timestamp = t;
    const Vec3<double> down = -truth.orientation.body_z_in_world();
    const double cos_tilt = -down.z;
    double noise = 0.0;
    if (cfg_.tof_noise_std > 0.0) noise = tof_rng_.next() * cfg_.tof_noise_std;
    if (cos_tilt < std::cos(geom_.tof_max_tilt)) return s;
    const auto range = terrain.raycast(truth.position, down, geom_.tof_max_range);
    if (!range) return s;
    s.distance = std::max(0.0, *range + noise);
    s.valid = true;
    return s;
  }

  /// Ideal flow per frame: scale * dt * (v_body / range -/+ rotation term),
  /// where the rotation term comes from the rate about the orthogonal lateral axis.
  FlowSample sample_flow(const VehicleState& truth, const TerrainField& terrain, double t) {
    FlowSample s;
    s.timestamp = t;
    const double dt = have_flow_ ? t - last_flow_t_ : 1.0 / rates_.flow;
    have_flow_ = true;
    last_flow_t_ = t;

    std::array<double, 2> noise{0.0, 0.0};
    if (cfg_.flow_noise_std > 0.0) noise = {flow_rng_.next(), flow_rng_.next()};

    const Vec3<double> down = -truth.orientation.body_z_in_world();
    const auto range = terrain.raycast(truth.position, down, 10.0);
    if (!range || *range < geom_.flow_min_height || down.z >= 0.0) return s;

    const double h = *range;
    const std::array<double, 2> rate = ideal_flow_rate(truth, h);
    const double k = cfg_.flow_focal_scale * dt;
    const double sigma = cfg_.flow_noise_std * h / cfg_.flow_noise_ref_height;
    for (int i = 0; i < 2; ++i) {
      double f = k * rate[i] + sigma * noise[i];
      if (cfg_.flow_quantum > 0.0) f = std::round(f / cfg_.flow_quantum) * cfg_.flow_quantum;
      s.flow[i] = f;
    }
    const double speed = std::hypot(rate[0], rate[1]);
    s.quality = clamp(1.0 - h / geom_.flow_quality_height, 0.0, 1.0) *
                clamp(1.0 - speed / geom_.flow_quality_rate, 0.0, 1.0);
    return s;
  }

  /// Image-motion rate (rad/s) seen at the principal point for range h.
  static std::array<double, 2> ideal_flow_rate(const VehicleState& truth, double h) {
    const Vec3<double> vb = truth.orientation.rotate_inverse(truth.velocity);
    const Vec3<double>& w = truth.body_rates;
    return {vb.x / h - w.y, vb.y / h + w.x};
  }

  void set_gravity(double g) { gravity_ = g; }
  const NoiseConfig& config() const { return cfg_; }
  const SensorGeometry& geometry() const { return geom_; }
  const SensorRates& rates() const { return rates_; }

 private:
  NoiseConfig cfg_;
  SensorRates rates_;
  SensorGeometry geom_;
  double flap_frequency_;
  double gravity_{9.81};
  detail::GaussianStream imu_rng_, tof_rng_, flow_rng_;
  bool have_flow_{false};
  double last_flow_t_{0.0};
};

}  // namespace imav
