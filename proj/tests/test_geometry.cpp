#include <gtest/gtest.h>

#include "durl/geometry.hpp"
#include "oracles.hpp"

namespace durl {
namespace {

CameraIntrinsics simple_camera() {
  return {.fx = 500, .fy = 500, .cx = 320, .cy = 240, .width = 640, .height = 480, .dist = {}};
}

TEST(Project, OpticalAxisHitsPrincipalPoint) {
  const Vec2 px = project(Vec3(0, 0, 1), Pose{}, simple_camera());
  EXPECT_DOUBLE_EQ(px.x(), 320.0);
  EXPECT_DOUBLE_EQ(px.y(), 240.0);
}

TEST(Project, LateralOffset) {
  const Vec2 px = project(Vec3(0.1, 0, 1), Pose{}, simple_camera());
  EXPECT_DOUBLE_EQ(px.x(), 370.0);
  EXPECT_DOUBLE_EQ(px.y(), 240.0);
}

TEST(Project, NonPositiveDepthThrows) {
  try {
    project(Vec3(0, 0, 0), Pose{}, simple_camera());
    FAIL() << "expected NonPositiveDepth";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNonPositiveDepth);
  }
  EXPECT_THROW(project(Vec3(0, 0, -1), Pose{}, simple_camera()), Error);
}

TEST(Project, MatchesExtendedPrecisionOracle) {
  oracle::Rng rng(11);
  CameraIntrinsics k = simple_camera();
  k.dist = {-0.12, 0.03, 0.001, -0.0005, 0.002};
  for (int trial = 0; trial < 2000; ++trial) {
    Pose pose{oracle::random_rotation(rng), oracle::random_vec3(rng, -0.3, 0.3) + Vec3(0, 0, 3)};
    const Vec3 p = oracle::random_vec3(rng, -0.5, 0.5);
    const Vec2 got = project(p, pose, k);
    const auto want = oracle::project_ld(p, pose, k);
    EXPECT_NEAR(got.x(), static_cast<double>(want[0]), 1e-9);
    EXPECT_NEAR(got.y(), static_cast<double>(want[1]), 1e-9);
  }
}

TEST(Project, ScaleConsistentWithoutDistortion) {
  oracle::Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const Vec3 p = oracle::random_vec3(rng, -1, 1) + Vec3(0, 0, 2.5);
    const double s = std::uniform_real_distribution<double>(0.1, 10.0)(rng);
    const Vec2 a = project(p, Pose{}, simple_camera());
    const Vec2 b = project(s * p, Pose{}, simple_camera());
    EXPECT_NEAR((a - b).norm(), 0.0, 1e-9);
  }
}

TEST(Project, UndistortInvertsDistort) {
  const std::array<double, 5> d{-0.2, 0.05, 0.001, 0.002, 0.0};
  oracle::Rng rng(5);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int i = 0; i < 200; ++i) {
    const Vec2 xy(u(rng), u(rng));
    EXPECT_NEAR((undistort_normalized(distort_normalized(xy, d), d) - xy).norm(), 0.0, 1e-10);
  }
}

TEST(Intrinsics, Validation) {
  EXPECT_NO_THROW(simple_camera().validate());
  CameraIntrinsics k = simple_camera();
  k.fx = 0;
  EXPECT_THROW(k.validate(), Error);
  k = simple_camera();
  k.cx = 700;
  EXPECT_THROW(k.validate(), Error);
}

TEST(RotationError, TrivialCases) {
  EXPECT_DOUBLE_EQ(rotation_error(Mat3::Identity(), Mat3::Identity()), 0.0);
  EXPECT_NEAR(rotation_error(Mat3::Identity(), rotation_z(kPi / 2)), kPi / 2, 1e-15);
  EXPECT_NEAR(rotation_error(Mat3::Identity(), rotation_x(kPi)), kPi, 1e-12);
}

TEST(RotationError, MatchesQuaternionAngle) {
  oracle::Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const Mat3 a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    EXPECT_NEAR(rotation_error(a, b), oracle::quaternion_angle(a, b), 1e-9);
  }
}

TEST(RotationError, SymmetricLeftInvariantAndBounded) {
  oracle::Rng rng(2);
  for (int i = 0; i < 2000; ++i) {
    const Mat3 a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    const Mat3 q = oracle::random_rotation(rng);
    const double phi = rotation_error(a, b);
    EXPECT_DOUBLE_EQ(phi, rotation_error(b, a));
    EXPECT_NEAR(rotation_error(q * a, q * b), phi, 1e-9);
    EXPECT_GE(phi, 0.0);
    EXPECT_LE(phi, kPi);
    EXPECT_NEAR(rotation_error(a, a), 0.0, 1e-7);
  }
}

TEST(RotationError, ClampsDriftedInput) {
  Mat3 r = Mat3::Identity() * (1.0 + 1e-12);
  EXPECT_EQ(rotation_error(Mat3::Identity(), r), 0.0);
}

TEST(Euler, Identity) {
  const EulerAngles e = euler_decompose(Mat3::Identity());
  EXPECT_EQ(e.roll, 0.0);
  EXPECT_EQ(e.pitch, 0.0);
  EXPECT_EQ(e.yaw, 0.0);
  EXPECT_FALSE(e.gimbal_lock);
}

TEST(Euler, PureYaw) {
  const EulerAngles e = euler_decompose(rotation_z(0.3));
  EXPECT_NEAR(e.yaw, 0.3, 1e-15);
  EXPECT_NEAR(e.pitch, 0.0, 1e-15);
  EXPECT_NEAR(e.roll, 0.0, 1e-15);
}

TEST(Euler, RoundTripAwayFromGimbalLock) {
  oracle::Rng rng(4);
  int checked = 0;
  while (checked < 5000) {
    const Mat3 r = oracle::random_rotation(rng);
    const EulerAngles e = euler_decompose(r);
    if (std::abs(e.pitch) >= kPi / 2 - 1e-3) continue;
    ++checked;
    EXPECT_LE((euler_compose(e) - r).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LE(std::abs(e.roll), kPi);
    EXPECT_LE(std::abs(e.yaw), kPi);
  }
}

TEST(Euler, GimbalLockFlagsAndPinsRoll) {
  const Mat3 r = euler_compose({.roll = 0.4, .pitch = kPi / 2, .yaw = 0.1});
  const EulerAngles e = euler_decompose(r);
  EXPECT_TRUE(e.gimbal_lock);
  EXPECT_EQ(e.roll, 0.0);
  // The pinned decomposition still reproduces the rotation.
  EXPECT_LE((euler_compose(e) - r).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(AngleErrors, TrivialCases) {
  const AngleErrors same = angle_errors(rotation_y(0.2), rotation_y(0.2));
  EXPECT_EQ(same.roll, 0.0);
  EXPECT_EQ(same.pitch, 0.0);
  EXPECT_EQ(same.yaw, 0.0);

  const Mat3 base = euler_compose({.roll = 0.1, .pitch = -0.2, .yaw = 0.3});
  const Mat3 shifted = euler_compose({.roll = 0.1, .pitch = -0.2, .yaw = 0.5});
  const AngleErrors d = angle_errors(base, shifted);
  EXPECT_NEAR(d.roll, 0.0, 1e-12);
  EXPECT_NEAR(d.pitch, 0.0, 1e-12);
  EXPECT_NEAR(d.yaw, 0.2, 1e-12);
}

TEST(AngleErrors, WrapsAcrossPi) {
  const AngleErrors d = angle_errors(rotation_z(kPi - 0.05), rotation_z(-kPi + 0.05));
  EXPECT_NEAR(d.yaw, 0.1, 1e-12);
}

TEST(AngleErrors, MatchesExtendedPrecisionOracle) {
  oracle::Rng rng(8);
  for (int i = 0; i < 3000; ++i) {
    const Mat3 a = oracle::random_rotation(rng), b = oracle::random_rotation(rng);
    const AngleErrors got = angle_errors(a, b);
    if (got.gimbal_lock) continue;
    const auto ea = oracle::euler_ld(a), eb = oracle::euler_ld(b);
    EXPECT_NEAR(got.roll, static_cast<double>(oracle::wrap_ld(ea.roll, eb.roll)), 1e-9);
    EXPECT_NEAR(got.pitch, static_cast<double>(oracle::wrap_ld(ea.pitch, eb.pitch)), 1e-9);
    EXPECT_NEAR(got.yaw, static_cast<double>(oracle::wrap_ld(ea.yaw, eb.yaw)), 1e-9);
  }
}

TEST(ObjectModel, DiameterIsMaxPairwiseDistance) {
  const ObjectModel m = ObjectModel::box("b", 3, 4, 12);
  EXPECT_NEAR(m.diameter, 13.0, 1e-12);
  EXPECT_NO_THROW(m.validate());
}

TEST(ObjectModel, RejectsInconsistentDiameter) {
  ObjectModel m = default_model();
  m.diameter += 1e-6;
  EXPECT_THROW(m.validate(), Error);
  m.diameter = 0.0;
  EXPECT_THROW(m.validate(), Error);
}

TEST(Pose, ValidityCheck) {
  EXPECT_TRUE(Pose{}.is_valid());
  Pose p;
  p.rotation(0, 0) = -1.0;  // reflection
  EXPECT_FALSE(p.is_valid());
  p = Pose{};
  p.translation.x() = std::nan("");
  EXPECT_FALSE(p.is_valid());
}

}  // namespace
}  // namespace durl
