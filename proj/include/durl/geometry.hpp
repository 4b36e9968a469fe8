#pragma once

#include <array>
#include <cmath>
#include <string>
#include <utility>

#include "durl/error.hpp"
#include "durl/math.hpp"

namespace durl {

/// Rigid transform taking object-frame points into the camera frame.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();  // meters

  Vec3 transform(const Vec3& p) const { return rotation * p + translation; }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    return ortho <= tol && std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

/// Pinhole camera with Brown-Conrady distortion (k1, k2, p1, p2, k3).
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
  std::array<double, 5> dist{};

  bool has_distortion() const {
    for (double d : dist)
      if (d != 0.0) return true;
    return false;
  }

  void validate() const {
    if (!(fx > 0.0 && fy > 0.0))
      throw Error(ErrorCode::kInvalidArgument, "focal lengths must be positive");
    if (width <= 0 || height <= 0)
      throw Error(ErrorCode::kInvalidArgument, "image size must be positive");
    if (!(cx > 0.0 && cx < width && cy > 0.0 && cy < height))
      throw Error(ErrorCode::kInvalidArgument, "principal point outside image");
  }
};

struct EulerAngles {
  double roll = 0.0;   // about x
  double pitch = 0.0;  // about y
  double yaw = 0.0;    // about z
  bool gimbal_lock = false;
};

struct AngleErrors {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  bool gimbal_lock = false;
};

/// The 8-corner bounding box of an object, in the object frame.
struct ObjectModel {
  std::string name;
  std::array<Vec3, 8> corners{};
  double diameter = 0.0;

  static double max_pairwise_distance(const std::array<Vec3, 8>& corners) {
    double d = 0.0;
    for (std::size_t i = 0; i < corners.size(); ++i)
      for (std::size_t j = i + 1; j < corners.size(); ++j)
        d = std::max(d, (corners[i] - corners[j]).norm());
    return d;
  }

  static ObjectModel from_corners(std::string name, const std::array<Vec3, 8>& corners) {
    ObjectModel m{std::move(name), corners, max_pairwise_distance(corners)};
    m.validate();
    return m;
  }

  /// Axis-aligned box centred on the origin with the given side lengths.
  /// Corner order: x varies slowest, z fastest.
  static ObjectModel box(std::string name, double lx, double ly, double lz) {
    std::array<Vec3, 8> c;
    int k = 0;
    for (double sx : {-0.5, 0.5})
      for (double sy : {-0.5, 0.5})
        for (double sz : {-0.5, 0.5}) c[k++] = Vec3(sx * lx, sy * ly, sz * lz);
    return from_corners(std::move(name), c);
  }

  void validate() const {
    for (const auto& c : corners)
      if (!c.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite model corner");
    const double d = max_pairwise_distance(corners);
    if (!(diameter > 0.0))
      throw Error(ErrorCode::kInvalidArgument, "model diameter must be positive");
    if (std::abs(d - diameter) > 1e-9)
      throw Error(ErrorCode::kInvalidArgument,
                  "model diameter " + std::to_string(diameter) +
                      " does not match corners (" + std::to_string(d) + ")");
  }
};

/// Roughly the hull of an Aqua2 AUV, without flippers.
inline ObjectModel default_model() { return ObjectModel::box("aqua2", 0.65, 0.13, 0.45); }

inline CameraIntrinsics default_intrinsics() {
  return CameraIntrinsics{.fx = 500.0, .fy = 500.0, .cx = 320.0, .cy = 240.0,
                          .width = 640, .height = 480, .dist = {}};
}

// ---------------------------------------------------------------------------
// Projection

inline Vec2 distort_normalized(const Vec2& xy, const std::array<double, 5>& d) {
  const double x = xy.x(), y = xy.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
  const double xt = 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x);
  const double yt = d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y;
  return {x * radial + xt, y * radial + yt};
}

/// Fixed-point inversion of `distort_normalized`. Converges for the mild
/// distortion typical of calibrated lenses.
inline Vec2 undistort_normalized(const Vec2& distorted, const std::array<double, 5>& d,
                                 int iterations = 30) {
  Vec2 xy = distorted;
  for (int it = 0; it < iterations; ++it) {
    const double x = xy.x(), y = xy.y();
    const double r2 = x * x + y * y;
    const double radial = 1.0 + r2 * (d[0] + r2 * (d[1] + r2 * d[4]));
    const double xt = 2.0 * d[2] * x * y + d[3] * (r2 + 2.0 * x * x);
    const double yt = d[2] * (r2 + 2.0 * y * y) + 2.0 * d[3] * x * y;
    xy = Vec2((distorted.x() - xt) / radial, (distorted.y() - yt) / radial);
  }
  return xy;
}

inline constexpr double kMinDepth = 1e-9;

/// Projects a camera-frame point to (distorted) pixel coordinates.
inline Vec2 project_camera(const Vec3& pc, const CameraIntrinsics& intr) {
  if (!(pc.z() > kMinDepth))
    throw Error(ErrorCode::kNonPositiveDepth, "point behind or on the camera plane");
  Vec2 xy(pc.x() / pc.z(), pc.y() / pc.z());
  if (intr.has_distortion()) xy = distort_normalized(xy, intr.dist);
  return {intr.fx * xy.x() + intr.cx, intr.fy * xy.y() + intr.cy};
}

inline Vec2 project(const Vec3& point, const Pose& pose, const CameraIntrinsics& intr) {
  return project_camera(pose.transform(point), intr);
}

/// Normalized, undistorted image coordinates of an observed pixel.
inline Vec2 pixel_to_normalized(const Vec2& px, const CameraIntrinsics& intr) {
  Vec2 xy((px.x() - intr.cx) / intr.fx, (px.y() - intr.cy) / intr.fy);
  return intr.has_distortion() ? undistort_normalized(xy, intr.dist) : xy;
}

// ---------------------------------------------------------------------------
// Rotation metrics

/// Geodesic angle between two rotations, in [0, pi].
inline double rotation_error(const Mat3& r1, const Mat3& r2) {
  const double c = ((r1.transpose() * r2).trace() - 1.0) / 2.0;
  return std::acos(std::clamp(c, -1.0, 1.0));
}

inline Mat3 rotation_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }
inline Mat3 rotation_y(double a) { return Eigen::AngleAxisd(a, Vec3::UnitY()).toRotationMatrix(); }
inline Mat3 rotation_z(double a) { return Eigen::AngleAxisd(a, Vec3::UnitZ()).toRotationMatrix(); }

/// R = Rz(yaw) * Ry(pitch) * Rx(roll).
inline Mat3 euler_compose(const EulerAngles& e) {
  return rotation_z(e.yaw) * rotation_y(e.pitch) * rotation_x(e.roll);
}

inline constexpr double kGimbalLockTolerance = 1e-6;

/// Z-Y-X (yaw-pitch-roll) decomposition. At gimbal lock roll is pinned to
/// zero and the whole in-plane rotation is attributed to yaw.
inline EulerAngles euler_decompose(const Mat3& r) {
  EulerAngles e;
  const double s = std::clamp(-r(2, 0), -1.0, 1.0);
  e.pitch = std::asin(s);
  if (std::abs(std::abs(e.pitch) - kPi / 2.0) < kGimbalLockTolerance) {
    e.gimbal_lock = true;
    e.roll = 0.0;
    e.yaw = std::atan2(-r(0, 1), r(1, 1));
  } else {
    e.yaw = std::atan2(r(1, 0), r(0, 0));
    e.roll = std::atan2(r(2, 1), r(2, 2));
  }
  return e;
}

inline AngleErrors angle_errors(const Mat3& r1, const Mat3& r2) {
  const EulerAngles a = euler_decompose(r1);
  const EulerAngles b = euler_decompose(r2);
  return {wrapped_abs_diff(a.roll, b.roll), wrapped_abs_diff(a.pitch, b.pitch),
          wrapped_abs_diff(a.yaw, b.yaw), a.gimbal_lock || b.gimbal_lock};
}

}  // namespace durl
