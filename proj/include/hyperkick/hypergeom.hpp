#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>

#include "hyperkick/angmath.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/units.hpp"

// Shape coordinates for three identical atoms: hyperradius rho plus the two
// hyperangles (theta, phi) on the fundamental bosonic sector theta in
// [0, pi/4], phi in [0, pi/3]. theta = pi/4 is equilateral, theta = 0
// collinear. Orientation is carried separately by Euler angles; the shape
// volume element is (1/4) sin(4 theta) rho^5 dtheta dphi drho.

namespace hyperkick {

struct HyperPoint {
  double rho = 1.0;
  double theta = 0.0;
  double phi = 0.0;

  void validate() const {
    const double pi = units::pi, tol = 1e-12;
    if (!(rho > 0.0)) throw ConstraintViolation("HyperPoint: rho must be positive");
    if (theta < -tol || theta > pi / 4 + tol)
      throw ConstraintViolation("HyperPoint: theta outside [0, pi/4]");
    if (phi < -tol || phi > pi / 3 + tol)
      throw ConstraintViolation("HyperPoint: phi outside [0, pi/3]");
  }
};

struct TriangleGeometry {
  double r12 = 0.0;
  double r13 = 0.0;
  double r23 = 0.0;

  // triangle inequality within 1e-10 * rho-scale
  void validate() const {
    double scale = std::sqrt((r12 * r12 + r13 * r13 + r23 * r23) / std::sqrt(3.0));
    double tol = 1e-10 * scale;
    if (r12 < -tol || r13 < -tol || r23 < -tol)
      throw ConstraintViolation("TriangleGeometry: negative distance");
    if (r12 > r13 + r23 + tol || r13 > r12 + r23 + tol || r23 > r12 + r13 + tol)
      throw ConstraintViolation("TriangleGeometry: triangle inequality violated");
  }
};

// r_jk / rho as functions of the hyperangles alone.
inline std::array<double, 3> distance_ratios(double theta, double phi) {
  const double c4 = 1.0 / std::pow(3.0, 0.25);
  double c2t = std::cos(2.0 * theta);
  double base = 2.0 * units::pi / 3.0;
  auto g = [&](double shift) {
    double arg = 1.0 + c2t * std::cos(2.0 * phi + shift);
    return c4 * std::sqrt(std::max(0.0, arg));
  };
  return {g(0.0), g(-base), g(base)};
}

inline TriangleGeometry to_distances(const HyperPoint& p) {
  p.validate();
  auto g = distance_ratios(p.theta, p.phi);
  return {p.rho * g[0], p.rho * g[1], p.rho * g[2]};
}

// Inverse shape map. The returned point is the canonical-sector
// representative (relabelings shift phi by pi/3); for equilateral input the
// phi value is conventionally 0.
inline HyperPoint from_distances(const TriangleGeometry& t) {
  t.validate();
  double s2 = t.r12 * t.r12 + t.r13 * t.r13 + t.r23 * t.r23;
  if (s2 <= 0.0) throw DegenerateGeometry("from_distances: all distances zero");
  double rho2 = s2 / std::sqrt(3.0);
  double rho = std::sqrt(rho2);
  double X = std::sqrt(3.0) * t.r12 * t.r12 / rho2 - 1.0;
  double Y = std::sqrt(3.0) * t.r13 * t.r13 / rho2 - 1.0;
  double Z = std::sqrt(3.0) * t.r23 * t.r23 / rho2 - 1.0;
  double S = (Y - Z) / std::sqrt(3.0);
  double c2t = std::hypot(X, S);
  if (c2t < 1e-14) return {rho, units::pi / 4.0, 0.0};
  double theta = 0.5 * std::acos(std::min(1.0, c2t));
  double two_phi = std::atan2(S, X);
  double period = 2.0 * units::pi / 3.0;
  two_phi = std::fmod(two_phi, period);
  if (two_phi < 0.0) two_phi += period;
  return {rho, theta, 0.5 * two_phi};
}

// Body-frame orientation of bond jk: cos(angle between bond jk and the lab
// z axis) = a * sin(b)cos(g) + b * sin(b)sin(g). The coefficient pairs are
// rho-independent and satisfy a^2 + b^2 = 1 exactly (bonds lie in the body
// xy plane).
struct BondOrientation {
  double a = 0.0;
  double b = 0.0;
};

inline std::array<BondOrientation, 3> bond_orientations(double theta, double phi) {
  const double dbar = std::sqrt(2.0) / std::pow(3.0, 0.25);
  auto g = distance_ratios(theta, phi);
  for (double gi : g)
    if (gi <= 0.0)
      throw DegenerateGeometry("bond_orientations: coincident atoms (zero distance)");
  double ct = std::cos(theta), st = std::sin(theta);
  double cp = std::cos(phi), sp = std::sin(phi);
  const double s3 = std::sqrt(3.0);
  std::array<BondOrientation, 3> out;
  out[0] = {dbar / g[0] * cp * ct, dbar / g[0] * sp * st};
  out[1] = {dbar / (2.0 * g[1]) * ct * (cp + s3 * sp), dbar / (2.0 * g[1]) * st * (-s3 * cp + sp)};
  out[2] = {-dbar / (2.0 * g[2]) * ct * (cp - s3 * sp), -dbar / (2.0 * g[2]) * st * (s3 * cp + sp)};
  return out;
}

// cos(theta_12), cos(theta_13), cos(theta_23) between each bond and the lab
// z axis; independent of alpha by construction.
inline std::array<double, 3> lab_angles(const HyperPoint& p, const EulerAngles& ang) {
  p.validate();
  auto bo = bond_orientations(p.theta, p.phi);
  double u = std::sin(ang.beta) * std::cos(ang.gamma);
  double v = std::sin(ang.beta) * std::sin(ang.gamma);
  return {bo[0].a * u + bo[0].b * v, bo[1].a * u + bo[1].b * v, bo[2].a * u + bo[2].b * v};
}

// Principal inertia frame of the triangle, unit masses. Moments ascend;
// axes are the matching columns. Sign convention: the smallest-moment axis
// points toward atom 1, the middle axis toward atom 2 (centroid-relative;
// first nonzero projection decides), and the third axis completes a
// right-handed frame. Planar shapes put the largest moment out of plane.
struct PrincipalFrame {
  Eigen::Vector3d moments;
  Eigen::Matrix3d axes;                      // columns = principal axes
  std::array<Eigen::Vector3d, 3> positions;  // atoms in the principal frame
};

inline PrincipalFrame principal_frame(const TriangleGeometry& t) {
  t.validate();
  if (t.r12 <= 0.0 || t.r13 <= 0.0 || t.r23 <= 0.0)
    throw DegenerateGeometry("principal_frame: coincident atoms");
  double x3 = (t.r12 * t.r12 + t.r13 * t.r13 - t.r23 * t.r23) / (2.0 * t.r12);
  double y3sq = t.r13 * t.r13 - x3 * x3;
  double y3 = std::sqrt(std::max(0.0, y3sq));
  std::array<Eigen::Vector3d, 3> p = {Eigen::Vector3d(0, 0, 0),
                                      Eigen::Vector3d(t.r12, 0, 0),
                                      Eigen::Vector3d(x3, y3, 0)};
  Eigen::Vector3d cm = (p[0] + p[1] + p[2]) / 3.0;
  for (auto& v : p) v -= cm;

  Eigen::Matrix3d I = Eigen::Matrix3d::Zero();
  for (const auto& v : p) I += v.squaredNorm() * Eigen::Matrix3d::Identity() - v * v.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(I);
  if (es.info() != Eigen::Success)
    throw NoConvergence("principal_frame: inertia diagonalization failed");

  PrincipalFrame f;
  f.moments = es.eigenvalues();  // ascending
  f.axes = es.eigenvectors();
  for (int k = 0; k < 2; ++k) {
    double proj = f.axes.col(k).dot(p[k]);
    if (std::abs(proj) < 1e-12) proj = f.axes.col(k).dot(p[(k + 1) % 3]);
    if (proj < 0.0) f.axes.col(k) *= -1.0;
  }
  f.axes.col(2) = f.axes.col(0).cross(f.axes.col(1));
  for (int i = 0; i < 3; ++i) f.positions[i] = f.axes.transpose() * p[i];
  return f;
}

}  // namespace hyperkick
