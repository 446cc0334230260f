#include <gtest/gtest.h>

#include <random>

#include "imav/math.hpp"

using imav::Quat;
using imav::Vec3;

namespace {

// Rotation matrix from a unit quaternion, written out independently of
// Quat::rotate.
std::array<double, 9> matrix_of(const Quat<double>& q) {
  const double w = q.w, x = q.x, y = q.y, z = q.z;
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Quat<double> random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return Quat<double>{n(rng), n(rng), n(rng), n(rng)}.normalized();
}

}  // namespace

TEST(Quaternion, RotateMatchesRotationMatrix) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    const auto q = random_quat(rng);
    const Vec3<double> v{n(rng), n(rng), n(rng)};
    const auto m = matrix_of(q);
    const Vec3<double> r = q.rotate(v);
    EXPECT_NEAR(r.x, m[0] * v.x + m[1] * v.y + m[2] * v.z, 1e-12);
    EXPECT_NEAR(r.y, m[3] * v.x + m[4] * v.y + m[5] * v.z, 1e-12);
    EXPECT_NEAR(r.z, m[6] * v.x + m[7] * v.y + m[8] * v.z, 1e-12);
    const Vec3<double> back = q.rotate_inverse(r);
    EXPECT_NEAR((back - v).norm(), 0.0, 1e-12);
  }
}

TEST(Quaternion, ThirdColumnAndRow) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const auto q = random_quat(rng);
    EXPECT_NEAR((q.body_z_in_world() - q.rotate(Vec3<double>::unit_z())).norm(), 0.0, 1e-12);
    EXPECT_NEAR((q.world_z_in_body() - q.rotate_inverse(Vec3<double>::unit_z())).norm(), 0.0,
                1e-12);
  }
}

TEST(Quaternion, YawRoundTripAndAxisAngle) {
  for (double yaw : {-3.0, -1.0, 0.0, 0.5, 2.9}) {
    EXPECT_NEAR(Quat<double>::from_yaw(yaw).yaw(), yaw, 1e-12);
  }
  const auto q = Quat<double>::from_axis_angle({1.0, 0.0, 0.0}, 0.3);
  EXPECT_NEAR(q.roll(), 0.3, 1e-12);
  EXPECT_NEAR(q.pitch(), 0.0, 1e-12);
  const auto r = Quat<double>::from_rotation_vector({0.0, 0.0, 1e-14});
  EXPECT_NEAR(r.norm(), 1.0, 1e-15);
}

TEST(Quaternion, AngleBetweenIsTheRelativeRotationAngle) {
  const auto a = Quat<double>::from_yaw(0.2);
  const auto b = Quat<double>::from_yaw(0.7);
  EXPECT_NEAR(Quat<double>::angle_between(a, b), 0.5, 1e-12);
  // q and -q are the same attitude.
  EXPECT_NEAR(Quat<double>::angle_between(a, a * -1.0), 0.0, 1e-12);
}

TEST(Vector, CrossAndDot) {
  const Vec3<double> a{1, 2, 3}, b{-2, 0.5, 4};
  const auto c = a.cross(b);
  EXPECT_DOUBLE_EQ(c.dot(a), 0.0);
  EXPECT_DOUBLE_EQ(c.dot(b), 0.0);
  EXPECT_DOUBLE_EQ(a.dot(b), -2 + 1 + 12);
}
