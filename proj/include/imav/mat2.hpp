#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>

namespace imav {

template <typename T>
struct Vec2 {
  static constexpr std::size_t kRows = 2;
  static constexpr std::size_t kCols = 1;

  T a{0}, b{0};

  constexpr Vec2 operator+(const Vec2& o) const { return {a + o.a, b + o.b}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {a - o.a, b - o.b}; }
  constexpr Vec2 operator*(T s) const { return {a * s, b * s}; }
  constexpr bool operator==(const Vec2&) const = default;
};

/// Row-major 2x2 matrix; the largest matrix the estimator is allowed to form.
template <typename T>
struct Mat2 {
  static constexpr std::size_t kRows = 2;
  static constexpr std::size_t kCols = 2;

  T m00{0}, m01{0}, m10{0}, m11{0};

  static constexpr Mat2 identity() { return {T(1), T(0), T(0), T(1)}; }
  static constexpr Mat2 diag(T d0, T d1) { return {d0, T(0), T(0), d1}; }

  constexpr Mat2 operator+(const Mat2& o) const {
    return {m00 + o.m00, m01 + o.m01, m10 + o.m10, m11 + o.m11};
  }
  constexpr Mat2 operator-(const Mat2& o) const {
    return {m00 - o.m00, m01 - o.m01, m10 - o.m10, m11 - o.m11};
  }
  constexpr Mat2 operator*(T s) const { return {m00 * s, m01 * s, m10 * s, m11 * s}; }
  constexpr Mat2 operator*(const Mat2& o) const {
    return {m00 * o.m00 + m01 * o.m10, m00 * o.m01 + m01 * o.m11,
            m10 * o.m00 + m11 * o.m10, m10 * o.m01 + m11 * o.m11};
  }
  constexpr Vec2<T> operator*(const Vec2<T>& v) const {
    return {m00 * v.a + m01 * v.b, m10 * v.a + m11 * v.b};
  }
  constexpr Mat2 transpose() const { return {m00, m10, m01, m11}; }
  constexpr T det() const { return m00 * m11 - m01 * m10; }
  constexpr T trace() const { return m00 + m11; }
  constexpr bool operator==(const Mat2&) const = default;

  constexpr Mat2 symmetrized() const {
    const T off = (m01 + m10) / T(2);
    return {m00, off, off, m11};
  }
};

template <typename M>
concept MatrixAtMost2x2 = requires {
  { M::kRows } -> std::convertible_to<std::size_t>;
  { M::kCols } -> std::convertible_to<std::size_t>;
} && (M::kRows <= 2) && (M::kCols <= 2);

static_assert(MatrixAtMost2x2<Mat2<float>> && MatrixAtMost2x2<Vec2<double>>);

/// Eigenvalues of a symmetric 2x2 matrix, ascending.
template <typename T>
Vec2<T> symmetric_eigenvalues(const Mat2<T>& s) {
  const T mean = (s.m00 + s.m11) / T(2);
  const T half_diff = (s.m00 - s.m11) / T(2);
  const T r = std::sqrt(half_diff * half_diff + s.m01 * s.m01);
  return {mean - r, mean + r};
}

/// Re-projects a symmetric 2x2 matrix onto eigenvalues in [floor, ceiling].
/// Returns true when a clamp was applied.
template <typename T>
bool project_psd(Mat2<T>& s, T floor, T ceiling) {
  const Vec2<T> ev = symmetric_eigenvalues(s);
  if (ev.a >= floor && ev.b <= ceiling) return false;
  const T l0 = ev.a < floor ? floor : (ev.a > ceiling ? ceiling : ev.a);
  const T l1 = ev.b < floor ? floor : (ev.b > ceiling ? ceiling : ev.b);
  // Eigenvector of the larger eigenvalue.
  T vx, vy;
  if (std::abs(s.m01) > T(0)) {
    vx = ev.b - s.m11;
    vy = s.m01;
  } else if (s.m00 >= s.m11) {
    vx = T(1);
    vy = T(0);
  } else {
    vx = T(0);
    vy = T(1);
  }
  const T n = std::sqrt(vx * vx + vy * vy);
  vx /= n;
  vy /= n;
  // s = l1 v v^T + l0 u u^T with u the orthogonal unit vector.
  s.m00 = l1 * vx * vx + l0 * vy * vy;
  s.m11 = l1 * vy * vy + l0 * vx * vx;
  s.m01 = s.m10 = (l1 - l0) * vx * vy;
  return true;
}

}  // namespace imav
