#pragma once

#include <array>
#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <unsupported/Eigen/Polynomials>

#include "durl/geometry.hpp"
#include "durl/math.hpp"

/// Perspective-n-point solvers. Image observations are normalized,
/// undistorted coordinates (x/z, y/z); use `pixel_to_normalized` first.
namespace durl::pnp {

/// Below this ratio of smallest to largest principal extent the point set
/// is treated as planar.
inline constexpr double kPlanarExtentRatio = 1e-3;

/// Rigid transform minimising sum ||R * src + t - dst||^2.
inline Pose absolute_orientation(std::span<const Vec3> src, std::span<const Vec3> dst) {
  const auto n = static_cast<Eigen::Index>(src.size());
  Eigen::Matrix3Xd a(3, n), b(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    a.col(i) = src[i];
    b.col(i) = dst[i];
  }
  const Eigen::Matrix4d t = Eigen::umeyama(a, b, false);
  return {t.topLeftCorner<3, 3>(), t.topRightCorner<3, 1>()};
}

/// Mean squared error in normalized image units; +inf if any point lands
/// behind the camera.
inline double normalized_mse(const Pose& pose, std::span<const Vec3> world,
                             std::span<const Vec2> image) {
  double sum = 0.0;
  for (std::size_t i = 0; i < world.size(); ++i) {
    const Vec3 pc = pose.transform(world[i]);
    if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    sum += (pc.head<2>() / pc.z() - image[i]).squaredNorm();
  }
  return sum / static_cast<double>(world.size());
}

struct PrincipalFrame {
  Vec3 centroid = Vec3::Zero();
  Vec3 variances = Vec3::Zero();  // descending
  Mat3 axes = Mat3::Identity();   // columns match `variances`, right-handed
};

inline PrincipalFrame principal_frame(std::span<const Vec3> pts) {
  PrincipalFrame f;
  for (const auto& p : pts) f.centroid += p;
  f.centroid /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) cov += (p - f.centroid) * (p - f.centroid).transpose();
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  for (int k = 0; k < 3; ++k) {
    f.variances(k) = std::max(es.eigenvalues()(2 - k), 0.0);
    f.axes.col(k) = es.eigenvectors().col(2 - k);
  }
  f.axes.col(2) = f.axes.col(0).cross(f.axes.col(1));
  return f;
}

/// Homography-based pose for coplanar points (n >= 4).
inline std::optional<Pose> solve_planar(std::span<const Vec3> world, std::span<const Vec2> image,
                                        const PrincipalFrame& frame) {
  const auto n = world.size();
  if (n < 4) return std::nullopt;

  std::vector<Vec2> plane(n);
  double plane_scale = 0.0;
  Vec2 image_mean = Vec2::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 d = world[i] - frame.centroid;
    plane[i] = Vec2(frame.axes.col(0).dot(d), frame.axes.col(1).dot(d));
    plane_scale += plane[i].norm();
    image_mean += image[i];
  }
  image_mean /= static_cast<double>(n);
  double image_scale = 0.0;
  for (const auto& u : image) image_scale += (u - image_mean).norm();
  if (plane_scale <= 0.0 || image_scale <= 0.0) return std::nullopt;
  plane_scale = std::sqrt(2.0) * static_cast<double>(n) / plane_scale;
  image_scale = std::sqrt(2.0) * static_cast<double>(n) / image_scale;

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(2 * n), 9);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = plane[i].x() * plane_scale, y = plane[i].y() * plane_scale;
    const Vec2 u = (image[i] - image_mean) * image_scale;
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << x, y, 1.0, 0.0, 0.0, 0.0, -u.x() * x, -u.x() * y, -u.x();
    a.row(r + 1) << 0.0, 0.0, 0.0, x, y, 1.0, -u.y() * x, -u.y() * y, -u.y();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Mat3 hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);

  Mat3 t_plane = Mat3::Identity();
  t_plane(0, 0) = t_plane(1, 1) = plane_scale;
  Mat3 t_image_inv = Mat3::Identity();
  t_image_inv(0, 0) = t_image_inv(1, 1) = 1.0 / image_scale;
  t_image_inv(0, 2) = image_mean.x();
  t_image_inv(1, 2) = image_mean.y();
  const Mat3 hom = t_image_inv * hn * t_plane;

  const double norm = 0.5 * (hom.col(0).norm() + hom.col(1).norm());
  if (!(norm > 0.0) || !std::isfinite(norm)) return std::nullopt;
  double lambda = 1.0 / norm;
  if (hom(2, 2) * lambda < 0.0) lambda = -lambda;
  const Vec3 r1 = lambda * hom.col(0);
  const Vec3 r2 = lambda * hom.col(1);
  Mat3 rp;
  rp << r1, r2, r1.cross(r2);
  rp = nearest_rotation(rp);
  const Vec3 tp = lambda * hom.col(2);

  Pose pose;
  pose.rotation = rp * frame.axes.transpose();
  pose.translation = tp - pose.rotation * frame.centroid;
  if (!pose.rotation.allFinite() || !pose.translation.allFinite()) return std::nullopt;
  return pose;
}

namespace detail {

using Vec4 = Eigen::Vector4d;
using Kernel = Eigen::Matrix<double, 12, 4>;
using Mat6x10 = Eigen::Matrix<double, 6, 10>;
using Vec6 = Eigen::Matrix<double, 6, 1>;

inline constexpr std::array<std::array<int, 2>, 6> kPairs{
    {{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};

// Products ordered b11, b12, b22, b13, b23, b33, b14, b24, b34, b44; the
// cross terms carry a factor two in L.
inline Eigen::Matrix<double, 10, 1> beta_products(const Vec4& b) {
  Eigen::Matrix<double, 10, 1> p;
  p << b(0) * b(0), b(0) * b(1), b(1) * b(1), b(0) * b(2), b(1) * b(2), b(2) * b(2),
      b(0) * b(3), b(1) * b(3), b(2) * b(3), b(3) * b(3);
  return p;
}

inline Mat6x10 distance_system(const Kernel& v) {
  Mat6x10 l;
  for (int r = 0; r < 6; ++r) {
    std::array<Vec3, 4> dv;
    for (int k = 0; k < 4; ++k)
      dv[k] = v.col(k).segment<3>(3 * kPairs[r][0]) - v.col(k).segment<3>(3 * kPairs[r][1]);
    l.row(r) << dv[0].dot(dv[0]), 2 * dv[0].dot(dv[1]), dv[1].dot(dv[1]), 2 * dv[0].dot(dv[2]),
        2 * dv[1].dot(dv[2]), dv[2].dot(dv[2]), 2 * dv[0].dot(dv[3]), 2 * dv[1].dot(dv[3]),
        2 * dv[2].dot(dv[3]), dv[3].dot(dv[3]);
  }
  return l;
}

template <int N>
Eigen::Matrix<double, N, 1> least_squares(const Mat6x10& l, const std::array<int, N>& cols,
                                          const Vec6& rho) {
  Eigen::Matrix<double, 6, N> sub;
  for (int j = 0; j < N; ++j) sub.col(j) = l.col(cols[j]);
  return sub.colPivHouseholderQr().solve(rho);
}

inline void gauss_newton_betas(const Mat6x10& l, const Vec6& rho, Vec4& b, int iterations = 5) {
  for (int it = 0; it < iterations; ++it) {
    Eigen::Matrix<double, 6, 4> jac;
    Vec6 res;
    for (int r = 0; r < 6; ++r) {
      const auto& lr = l.row(r);
      jac(r, 0) = 2 * b(0) * lr(0) + b(1) * lr(1) + b(2) * lr(3) + b(3) * lr(6);
      jac(r, 1) = b(0) * lr(1) + 2 * b(1) * lr(2) + b(2) * lr(4) + b(3) * lr(7);
      jac(r, 2) = b(0) * lr(3) + b(1) * lr(4) + 2 * b(2) * lr(5) + b(3) * lr(8);
      jac(r, 3) = b(0) * lr(6) + b(1) * lr(7) + b(2) * lr(8) + 2 * b(3) * lr(9);
      res(r) = rho(r) - lr.dot(beta_products(b));
    }
    const Vec4 step = jac.colPivHouseholderQr().solve(res);
    if (!step.allFinite()) return;
    b += step;
  }
}

}  // namespace detail

/// Grunert's three-point solution. Returns up to four poses.
inline std::vector<Pose> solve_p3p(std::span<const Vec3> world, std::span<const Vec2> image) {
  std::vector<Pose> out;
  if (world.size() < 3 || image.size() < 3) return out;
  std::array<Vec3, 3> f;
  for (int i = 0; i < 3; ++i) f[i] = Vec3(image[i].x(), image[i].y(), 1.0).normalized();
  const double a2 = (world[1] - world[2]).squaredNorm();
  const double b2 = (world[0] - world[2]).squaredNorm();
  const double c2 = (world[0] - world[1]).squaredNorm();
  if (!(a2 > 0.0 && b2 > 0.0 && c2 > 0.0)) return out;
  const double ca = f[1].dot(f[2]), cb = f[0].dot(f[2]), cg = f[0].dot(f[1]);
  const double amc = (a2 - c2) / b2, apc = (a2 + c2) / b2;

  Eigen::Matrix<double, 5, 1> coeff;  // ascending powers of v
  coeff(4) = (amc - 1) * (amc - 1) - 4 * c2 / b2 * ca * ca;
  coeff(3) = 4 * (amc * (1 - amc) * cb - (1 - apc) * ca * cg + 2 * c2 / b2 * ca * ca * cb);
  coeff(2) = 2 * (amc * amc - 1 + 2 * amc * amc * cb * cb + 2 * (b2 - c2) / b2 * ca * ca -
                  4 * apc * ca * cb * cg + 2 * (b2 - a2) / b2 * cg * cg);
  coeff(1) = 4 * (-amc * (1 + amc) * cb + 2 * a2 / b2 * cg * cg * cb - (1 - apc) * ca * cg);
  coeff(0) = (1 + amc) * (1 + amc) - 4 * a2 / b2 * cg * cg;
  if (!coeff.allFinite() || std::abs(coeff(4)) < 1e-14 * coeff.cwiseAbs().maxCoeff()) return out;

  Eigen::PolynomialSolver<double, 4> solver(coeff);
  std::vector<double> roots;
  solver.realRoots(roots, 1e-3);
  const std::array<Vec3, 3> tri{world[0], world[1], world[2]};
  for (const double v : roots) {
    const double den = 2 * (cg - v * ca);
    const double s1sq = b2 / (1 + v * v - 2 * v * cb);
    if (std::abs(den) < 1e-14 || !(s1sq > 0.0)) continue;
    const double u = ((-1 + amc) * v * v - 2 * amc * cb * v + 1 + amc) / den;
    const double s1 = std::sqrt(s1sq);
    const std::array<Vec3, 3> cam{s1 * f[0], u * s1 * f[1], v * s1 * f[2]};
    if (cam[1].z() <= 0 || cam[2].z() <= 0) continue;
    const Pose pose = absolute_orientation(tri, cam);
    if (pose.rotation.allFinite() && pose.translation.allFinite()) out.push_back(pose);
  }
  return out;
}

namespace detail {

inline std::optional<Pose> epnp_core(std::span<const Vec3> world, std::span<const Vec2> image,
                                     const PrincipalFrame& frame) {
  const auto n = world.size();
  if (std::sqrt(frame.variances(2) / frame.variances(0)) < kPlanarExtentRatio)
    return solve_planar(world, image, frame);

  std::array<Vec3, 4> cw;
  cw[0] = frame.centroid;
  Mat3 basis;
  for (int k = 0; k < 3; ++k) {
    basis.col(k) = std::sqrt(frame.variances(k)) * frame.axes.col(k);
    cw[k + 1] = frame.centroid + basis.col(k);
  }
  const Mat3 basis_inv = basis.inverse();

  std::vector<Vec4> alphas(n);
  Eigen::Matrix<double, 12, 12> mtm = Eigen::Matrix<double, 12, 12>::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 a = basis_inv * (world[i] - frame.centroid);
    alphas[i] << 1.0 - a.sum(), a(0), a(1), a(2);
    Eigen::Matrix<double, 2, 12> m = Eigen::Matrix<double, 2, 12>::Zero();
    for (int j = 0; j < 4; ++j) {
      m(0, 3 * j) = alphas[i](j);
      m(0, 3 * j + 2) = -alphas[i](j) * image[i].x();
      m(1, 3 * j + 1) = alphas[i](j);
      m(1, 3 * j + 2) = -alphas[i](j) * image[i].y();
    }
    mtm.noalias() += m.transpose() * m;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(mtm);
  const Kernel kernel = es.eigenvectors().leftCols<4>();

  const Mat6x10 l = distance_system(kernel);
  Vec6 rho;
  for (int r = 0; r < 6; ++r) rho(r) = (cw[kPairs[r][0]] - cw[kPairs[r][1]]).squaredNorm();

  std::array<Vec4, 3> starts;
  {
    const auto b4 = least_squares<4>(l, {0, 1, 3, 6}, rho);
    const double s = b4(0) < 0 ? -1.0 : 1.0;
    const double b0 = std::sqrt(std::abs(b4(0)));
    starts[0] = b0 > 0 ? Vec4(b0, s * b4(1) / b0, s * b4(2) / b0, s * b4(3) / b0) : Vec4::Zero();
  }
  for (int variant = 0; variant < 2; ++variant) {
    Vec4 b = Vec4::Zero();
    Eigen::Matrix<double, 5, 1> sol = Eigen::Matrix<double, 5, 1>::Zero();
    if (variant == 0)
      sol.head<3>() = least_squares<3>(l, {0, 1, 2}, rho);
    else
      sol = least_squares<5>(l, {0, 1, 2, 3, 4}, rho);
    if (sol(0) < 0) {
      b(0) = std::sqrt(-sol(0));
      b(1) = sol(2) < 0 ? std::sqrt(-sol(2)) : 0.0;
    } else {
      b(0) = std::sqrt(sol(0));
      b(1) = sol(2) > 0 ? std::sqrt(sol(2)) : 0.0;
    }
    if (sol(1) < 0) b(0) = -b(0);
    if (variant == 1 && b(0) != 0.0) b(2) = sol(3) / b(0);
    starts[variant + 1] = b;
  }

  std::optional<Pose> best;
  double best_err = std::numeric_limits<double>::infinity();
  std::vector<Vec3> pcs(n);
  for (Vec4 b : starts) {
    gauss_newton_betas(l, rho, b);
    const Eigen::Matrix<double, 12, 1> ccs = kernel * b;
    double z_sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      pcs[i] = Vec3::Zero();
      for (int j = 0; j < 4; ++j) pcs[i] += alphas[i](j) * ccs.segment<3>(3 * j);
      z_sum += pcs[i].z();
    }
    if (z_sum < 0)
      for (auto& p : pcs) p = -p;
    const Pose pose = absolute_orientation(world, pcs);
    if (!pose.rotation.allFinite() || !pose.translation.allFinite()) continue;
    const double err = normalized_mse(pose, world, image);
    if (err < best_err) {
      best_err = err;
      best = pose;
    }
  }
  return best;
}

}  // namespace detail

/// EPnP: points expressed as barycentric combinations of four control
/// points (centroid plus principal directions). Near-planar inputs go to
/// `solve_planar`. Returns nullopt on degenerate input or non-finite output.
inline std::optional<Pose> solve_epnp(std::span<const Vec3> world, std::span<const Vec2> image) {
  const auto n = world.size();
  if (n < 4 || image.size() != n) return std::nullopt;
  const PrincipalFrame frame = principal_frame(world);
  if (!(frame.variances(0) > 0.0)) return std::nullopt;
  if (frame.variances(1) < 1e-12 * frame.variances(0)) return std::nullopt;  // collinear

  std::optional<Pose> best = detail::epnp_core(world, image, frame);
  double best_err = best ? normalized_mse(*best, world, image) : std::numeric_limits<double>::infinity();

  // Four points leave a kernel EPnP's approximations cannot resolve; try
  // every P3P root on the best-spread triple and let the fourth vote.
  if (n == 4) {
    std::array<std::size_t, 3> tri{0, 1, 2};
    double best_area = -1.0;
    for (std::size_t skip = 0; skip < 4; ++skip) {
      std::array<std::size_t, 3> t{};
      for (std::size_t i = 0, k = 0; i < 4; ++i)
        if (i != skip) t[k++] = i;
      const double area = (world[t[1]] - world[t[0]]).cross(world[t[2]] - world[t[0]]).norm();
      if (area > best_area) {
        best_area = area;
        tri = t;
      }
    }
    const std::array<Vec3, 3> w3{world[tri[0]], world[tri[1]], world[tri[2]]};
    const std::array<Vec2, 3> i3{image[tri[0]], image[tri[1]], image[tri[2]]};
    for (const Pose& pose : solve_p3p(w3, i3)) {
      const double err = normalized_mse(pose, world, image);
      if (err < best_err) {
        best_err = err;
        best = pose;
      }
    }
  }
  return best;
}

struct RefineResult {
  Pose pose;
  int iterations = 0;
  double initial_cost = 0.0;  // sum of squared pixel residuals
  double final_cost = 0.0;
};

/// Gauss-Newton on the reprojection error, measured in undistorted pixels
/// (normalized residuals scaled by fx, fy). Updates the pose by a left
/// perturbation of the camera-frame points. Stops at `max_iterations`, on
/// a negligible step, or when a step fails to lower the cost.
inline RefineResult refine_pose(const Pose& initial, std::span<const Vec3> world,
                                std::span<const Vec2> image, double fx, double fy,
                                int max_iterations = 10) {
  const auto cost_of = [&](const Pose& p) {
    double c = 0.0;
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Vec3 pc = p.transform(world[i]);
      if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
      const Vec2 r = pc.head<2>() / pc.z() - image[i];
      c += fx * fx * r.x() * r.x() + fy * fy * r.y() * r.y();
    }
    return c;
  };

  RefineResult out{initial, 0, cost_of(initial), 0.0};
  out.final_cost = out.initial_cost;
  if (!std::isfinite(out.initial_cost)) return out;

  using Mat6 = Eigen::Matrix<double, 6, 6>;
  using Vec6 = Eigen::Matrix<double, 6, 1>;
  for (int it = 0; it < max_iterations; ++it) {
    Mat6 jtj = Mat6::Zero();
    Vec6 jtr = Vec6::Zero();
    for (std::size_t i = 0; i < world.size(); ++i) {
      const Vec3 pc = out.pose.transform(world[i]);
      const double iz = 1.0 / pc.z();
      Eigen::Matrix<double, 2, 3> dproj;
      dproj << fx * iz, 0.0, -fx * pc.x() * iz * iz, 0.0, fy * iz, -fy * pc.y() * iz * iz;
      Eigen::Matrix<double, 3, 6> dpoint;
      dpoint << -skew(pc), Mat3::Identity();
      const Eigen::Matrix<double, 2, 6> jac = dproj * dpoint;
      const Vec2 r(fx * (pc.x() * iz - image[i].x()), fy * (pc.y() * iz - image[i].y()));
      jtj.noalias() += jac.transpose() * jac;
      jtr.noalias() += jac.transpose() * r;
    }
    const Vec6 step = jtj.ldlt().solve(-jtr);
    if (!step.allFinite()) break;
    const Mat3 dr = exp_so3(step.head<3>());
    Pose next{nearest_rotation(dr * out.pose.rotation), dr * out.pose.translation + step.tail<3>()};
    const double cost = cost_of(next);
    if (!(cost <= out.final_cost)) break;
    out.pose = next;
    out.final_cost = cost;
    out.iterations = it + 1;
    if (step.norm() < 1e-12) break;
  }
  return out;
}

}  // namespace durl::pnp
