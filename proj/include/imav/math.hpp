#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace imav {

template <typename T>
struct Vec3 {
  T x{0}, y{0}, z{0};

  constexpr Vec3() = default;
  constexpr Vec3(T x_, T y_, T z_) : x(x_), y(y_), z(z_) {}

  template <typename U>
  constexpr explicit Vec3(const Vec3<U>& o)
      : x(static_cast<T>(o.x)), y(static_cast<T>(o.y)), z(static_cast<T>(o.z)) {}

  constexpr T& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  constexpr T operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }

  constexpr Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  constexpr Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  constexpr Vec3 operator-() const { return {-x, -y, -z}; }
  constexpr Vec3 operator*(T s) const { return {x * s, y * s, z * s}; }
  constexpr Vec3 operator/(T s) const { return {x / s, y / s, z / s}; }
  constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  constexpr Vec3& operator*=(T s) { x *= s; y *= s; z *= s; return *this; }
  constexpr bool operator==(const Vec3&) const = default;

  constexpr T dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  constexpr Vec3 cross(const Vec3& o) const {
    return {y * o.z - z * o.y, z * o.x - x * o.z, x * o.y - y * o.x};
  }
  T norm() const { return std::sqrt(dot(*this)); }
  constexpr Vec3 cwise(const Vec3& o) const { return {x * o.x, y * o.y, z * o.z}; }

  static constexpr Vec3 zero() { return {}; }
  static constexpr Vec3 unit_z() { return {T(0), T(0), T(1)}; }
};

template <typename T>
constexpr Vec3<T> operator*(T s, const Vec3<T>& v) { return v * s; }

template <typename T>
bool all_finite(const Vec3<T>& v) {
  return std::isfinite(v.x) && std::isfinite(v.y) && std::isfinite(v.z);
}

/// Hamilton quaternion, scalar first. When used as an attitude it maps body
/// vectors into the world frame.
template <typename T>
struct Quat {
  T w{1}, x{0}, y{0}, z{0};

  constexpr Quat() = default;
  constexpr Quat(T w_, T x_, T y_, T z_) : w(w_), x(x_), y(y_), z(z_) {}

  template <typename U>
  constexpr explicit Quat(const Quat<U>& o)
      : w(static_cast<T>(o.w)), x(static_cast<T>(o.x)), y(static_cast<T>(o.y)),
        z(static_cast<T>(o.z)) {}

  static constexpr Quat identity() { return {}; }

  static Quat from_axis_angle(const Vec3<T>& axis, T angle) {
    const T n = axis.norm();
    if (n <= T(0)) return identity();
    const T s = std::sin(angle / T(2)) / n;
    return {std::cos(angle / T(2)), axis.x * s, axis.y * s, axis.z * s};
  }

  /// exp(v/2): rotation by the rotation vector v.
  static Quat from_rotation_vector(const Vec3<T>& v) {
    const T angle = v.norm();
    if (angle < T(1e-12)) {
      return Quat{T(1), v.x / T(2), v.y / T(2), v.z / T(2)}.normalized();
    }
    return from_axis_angle(v, angle);
  }

  static Quat from_yaw(T yaw) { return {std::cos(yaw / T(2)), T(0), T(0), std::sin(yaw / T(2))}; }

  constexpr Quat operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z,
            w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x,
            w * o.z + x * o.y - y * o.x + z * o.w};
  }
  constexpr Quat operator+(const Quat& o) const { return {w + o.w, x + o.x, y + o.y, z + o.z}; }
  constexpr Quat operator*(T s) const { return {w * s, x * s, y * s, z * s}; }
  constexpr bool operator==(const Quat&) const = default;

  constexpr Quat conjugate() const { return {w, -x, -y, -z}; }
  constexpr Vec3<T> vec() const { return {x, y, z}; }
  T norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
  Quat normalized() const {
    const T n = norm();
    return {w / n, x / n, y / n, z / n};
  }

  /// Body to world.
  constexpr Vec3<T> rotate(const Vec3<T>& v) const {
    const Vec3<T> u{x, y, z};
    const Vec3<T> t = u.cross(v) * T(2);
    return v + t * w + u.cross(t);
  }
  /// World to body.
  constexpr Vec3<T> rotate_inverse(const Vec3<T>& v) const { return conjugate().rotate(v); }

  /// Third column of R(q): the body z axis expressed in the world frame.
  constexpr Vec3<T> body_z_in_world() const {
    return {T(2) * (x * z + w * y), T(2) * (y * z - w * x), T(1) - T(2) * (x * x + y * y)};
  }
  /// Third row of R(q): the world z axis expressed in the body frame.
  constexpr Vec3<T> world_z_in_body() const {
    return {T(2) * (x * z - w * y), T(2) * (y * z + w * x), T(1) - T(2) * (x * x + y * y)};
  }

  T yaw() const { return std::atan2(T(2) * (w * z + x * y), T(1) - T(2) * (y * y + z * z)); }
  T roll() const { return std::atan2(T(2) * (w * x + y * z), T(1) - T(2) * (x * x + y * y)); }
  T pitch() const {
    T s = T(2) * (w * y - z * x);
    s = s > T(1) ? T(1) : (s < T(-1) ? T(-1) : s);
    return std::asin(s);
  }

  /// Rotation angle (rad, in [0, pi]) of the relative rotation between two attitudes.
  static T angle_between(const Quat& a, const Quat& b) {
    const Quat d = a.conjugate() * b;
    const T v = std::sqrt(d.x * d.x + d.y * d.y + d.z * d.z);
    return T(2) * std::atan2(v, std::abs(d.w));
  }
};

template <typename T>
bool all_finite(const Quat<T>& q) {
  return std::isfinite(q.w) && std::isfinite(q.x) && std::isfinite(q.y) && std::isfinite(q.z);
}

template <typename T>
constexpr T deg2rad(T d) { return d * T(3.14159265358979323846) / T(180); }
template <typename T>
constexpr T rad2deg(T r) { return r * T(180) / T(3.14159265358979323846); }

inline constexpr double kPi = 3.14159265358979323846;

template <typename T>
constexpr T clamp(T v, T lo, T hi) { return v < lo ? lo : (v > hi ? hi : v); }

}  // namespace imav
