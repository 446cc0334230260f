#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "imav/math.hpp"

namespace imav {

struct FlatPlane {
  double height{0.0};
};

/// Smooth raised-cosine bump: peak at the center, zero slope at the rim.
struct CurvedBump {
  double cx{0.0}, cy{0.0};
  double peak_height{0.06};
  double radius{0.15};
};

/// Flat-topped disk (the flower head) standing on a stem.
struct FlowerDisk {
  double cx{0.0}, cy{0.0};
  double radius{0.05};
  double stem_height{0.04};
};

using TerrainPrimitive = std::variant<FlatPlane, CurvedBump, FlowerDisk>;

struct TerrainBounds {
  double x_min{-2.0}, x_max{2.0};
  double y_min{-2.0}, y_max{2.0};
};

/// Height field h(x, y) composed as the pointwise max of its primitives.
/// Queries outside the bounds are clamped onto the boundary.
class TerrainField {
 public:
  TerrainField() = default;
  TerrainField(std::vector<TerrainPrimitive> prims, TerrainBounds bounds)
      : prims_(std::move(prims)), bounds_(bounds) {
    if (bounds_.x_min >= bounds_.x_max || bounds_.y_min >= bounds_.y_max) {
      throw std::invalid_argument("terrain bounds are empty");
    }
  }

  static TerrainField flat(double height = 0.0) { return TerrainField({FlatPlane{height}}, {}); }

  double height(double x, double y) const {
    x = std::clamp(x, bounds_.x_min, bounds_.x_max);
    y = std::clamp(y, bounds_.y_min, bounds_.y_max);
    double h = 0.0;
    for (const auto& p : prims_) {
      h = std::max(h, std::visit([&](const auto& prim) { return eval(prim, x, y); }, p));
    }
    return h;
  }

  const std::vector<TerrainPrimitive>& primitives() const { return prims_; }
  const TerrainBounds& bounds() const { return bounds_; }

  /// First intersection of the ray origin + s * dir (dir unit length) with the
  /// height field, for s in [0, max_range]. Marches with a step proportional to
  /// the vertical clearance, then bisects the bracketing interval.
  std::optional<double> raycast(const Vec3<double>& origin, const Vec3<double>& dir,
                                double max_range) const {
    auto gap = [&](double s) {
      const Vec3<double> p = origin + dir * s;
      return p.z - height(p.x, p.y);
    };
    double s0 = 0.0;
    double g0 = gap(0.0);
    if (g0 <= 0.0) return 0.0;
    if (dir.z >= 0.0) return std::nullopt;

    constexpr double kMinStep = 1e-4;
    constexpr int kMaxSteps = 100000;
    for (int i = 0; i < kMaxSteps && s0 < max_range; ++i) {
      const double step = std::max(kMinStep, 0.5 * g0);
      const double s1 = std::min(s0 + step, max_range);
      const double g1 = gap(s1);
      if (g1 <= 0.0) {
        double lo = s0, hi = s1;
        for (int k = 0; k < 200 && hi - lo > 0.0; ++k) {
          const double mid = 0.5 * (lo + hi);
          if (mid <= lo || mid >= hi) break;
          if (gap(mid) > 0.0) lo = mid; else hi = mid;
        }
        return refine(origin, dir, lo, hi);
      }
      s0 = s1;
      g0 = g1;
    }
    return std::nullopt;
  }

 private:
  static double eval(const FlatPlane& p, double, double) { return p.height; }
  static double eval(const CurvedBump& b, double x, double y) {
    const double r = std::hypot(x - b.cx, y - b.cy);
    if (r >= b.radius) return 0.0;
    return b.peak_height * 0.5 * (1.0 + std::cos(kPi * r / b.radius));
  }
  static double eval(const FlowerDisk& f, double x, double y) {
    return std::hypot(x - f.cx, y - f.cy) <= f.radius ? f.stem_height : 0.0;
  }

  // Over a locally flat patch the intersection has a closed form; use it when
  // both bracket ends see the same terrain height so flat-ground ranges are exact.
  double refine(const Vec3<double>& origin, const Vec3<double>& dir, double lo, double hi) const {
    const Vec3<double> pl = origin + dir * lo;
    const Vec3<double> ph = origin + dir * hi;
    const double hl = height(pl.x, pl.y);
    const double hh = height(ph.x, ph.y);
    if (hl == hh) {
      const double s = (hl - origin.z) / dir.z;
      if (s >= lo - 1e-9 && s <= hi + 1e-9) return s;
    }
    return hi;
  }

  std::vector<TerrainPrimitive> prims_{FlatPlane{}};
  TerrainBounds bounds_{};
};

}  // namespace imav
