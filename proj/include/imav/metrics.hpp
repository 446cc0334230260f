#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "imav/math.hpp"

namespace imav {

/// Neumaier compensated sum; the result does not depend on the grouping of
/// the inputs to within one rounding of the exact sum.
class CompensatedSum {
 public:
  void add(double v) {
    const double t = sum_ + v;
    if (std::abs(sum_) >= std::abs(v)) {
      comp_ += (sum_ - t) + v;
    } else {
      comp_ += (v - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_{0.0};
  double comp_{0.0};
};

struct TimedVec {
  double t{0.0};
  Vec3<double> v{};
};

using TimedSeries = std::vector<TimedVec>;

struct TimeWindow {
  double start{-INFINITY};
  double end{INFINITY};
};

struct RmsResult {
  double lateral{0.0};   // xy-plane norm
  double altitude{0.0};  // |z|
  double total{0.0};     // 3D norm
  std::size_t samples{0};
};

namespace detail {

inline Vec3<double> interpolate(const TimedSeries& s, double t) {
  auto it = std::lower_bound(s.begin(), s.end(), t,
                             [](const TimedVec& a, double tt) { return a.t < tt; });
  if (it == s.end()) return s.back().v;
  if (it->t == t || it == s.begin()) return it->v;
  const TimedVec& b = *it;
  const TimedVec& a = *(it - 1);
  const double u = (t - a.t) / (b.t - a.t);
  return a.v + (b.v - a.v) * u;
}

}  // namespace detail

/// RMS of the difference of two timed series. Both are linearly resampled
/// onto the union of their timestamps inside the common overlap and window,
/// which makes the result symmetric in its arguments.
inline RmsResult compute_rms(const TimedSeries& a, const TimedSeries& b, TimeWindow window = {}) {
  if (a.empty() || b.empty()) throw std::invalid_argument("compute_rms: empty series");
  const double lo = std::max({a.front().t, b.front().t, window.start});
  const double hi = std::min({a.back().t, b.back().t, window.end});
  if (lo > hi) throw std::invalid_argument("compute_rms: series do not overlap in the window");

  std::vector<double> grid;
  grid.reserve(a.size() + b.size());
  for (const auto& s : a) {
    if (s.t >= lo && s.t <= hi) grid.push_back(s.t);
  }
  for (const auto& s : b) {
    if (s.t >= lo && s.t <= hi) grid.push_back(s.t);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  if (grid.empty()) throw std::invalid_argument("compute_rms: no samples in the window");

  CompensatedSum lat, alt, tot;
  for (double t : grid) {
    const Vec3<double> d = detail::interpolate(a, t) - detail::interpolate(b, t);
    const double l2 = d.x * d.x + d.y * d.y;
    lat.add(l2);
    alt.add(d.z * d.z);
    tot.add(l2 + d.z * d.z);
  }
  const double n = static_cast<double>(grid.size());
  return {std::sqrt(lat.value() / n), std::sqrt(alt.value() / n), std::sqrt(tot.value() / n),
          grid.size()};
}

/// RMS of a scalar sequence with compensated summation.
inline double rms(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  CompensatedSum s;
  for (double x : v) s.add(x * x);
  return std::sqrt(s.value() / static_cast<double>(v.size()));
}

struct MetricsReport {
  double lateral_rms_cm{0.0};
  double altitude_rms_cm{0.0};
  double att_rms_deg{0.0};
  double rate_rms_dps{0.0};
  double pos_rms_cm{0.0};
  double vel_rms_cm_s{0.0};
  double drift_cm{0.0};
  double max_speed_cm_s{0.0};
  // Mission-only metrics.
  std::optional<double> terrain_height_error_max_cm;
  std::optional<double> touchdown_error_cm;
  std::optional<double> course_length_m;
  std::optional<double> touchdown_time_s;

  std::optional<double> get(const std::string& name) const {
    if (name == "lateral_rms_cm") return lateral_rms_cm;
    if (name == "altitude_rms_cm") return altitude_rms_cm;
    if (name == "att_rms_deg") return att_rms_deg;
    if (name == "rate_rms_dps") return rate_rms_dps;
    if (name == "pos_rms_cm") return pos_rms_cm;
    if (name == "vel_rms_cm_s") return vel_rms_cm_s;
    if (name == "drift_cm") return drift_cm;
    if (name == "max_speed_cm_s") return max_speed_cm_s;
    if (name == "terrain_height_error_max_cm") return terrain_height_error_max_cm;
    if (name == "touchdown_error_cm") return touchdown_error_cm;
    if (name == "course_length_m") return course_length_m;
    if (name == "touchdown_time_s") return touchdown_time_s;
    return std::nullopt;
  }

  bool valid() const {
    for (double v : {lateral_rms_cm, altitude_rms_cm, att_rms_deg, rate_rms_dps, pos_rms_cm,
                     vel_rms_cm_s, drift_cm, max_speed_cm_s}) {
      if (!std::isfinite(v) || v < 0.0) return false;
    }
    for (const auto& o : {terrain_height_error_max_cm, touchdown_error_cm, course_length_m,
                          touchdown_time_s}) {
      if (o && (!std::isfinite(*o) || *o < 0.0)) return false;
    }
    return true;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"lateral_rms_cm", lateral_rms_cm}, {"altitude_rms_cm", altitude_rms_cm},
                        {"att_rms_deg", att_rms_deg},       {"rate_rms_dps", rate_rms_dps},
                        {"pos_rms_cm", pos_rms_cm},         {"vel_rms_cm_s", vel_rms_cm_s},
                        {"drift_cm", drift_cm},             {"max_speed_cm_s", max_speed_cm_s}};
    if (terrain_height_error_max_cm) j["terrain_height_error_max_cm"] = *terrain_height_error_max_cm;
    if (touchdown_error_cm) j["touchdown_error_cm"] = *touchdown_error_cm;
    if (course_length_m) j["course_length_m"] = *course_length_m;
    if (touchdown_time_s) j["touchdown_time_s"] = *touchdown_time_s;
    return j;
  }
};

}  // namespace imav
