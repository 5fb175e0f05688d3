#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "hyperkick/errors.hpp"
#include "hyperkick/interp.hpp"

// Non-uniform radial grid r(x) over a uniform auxiliary coordinate x in
// (0, 1), nodes strictly inside (r_min, r_max). The kinetic operator comes
// from centered 5-point stencils in x combined with the analytic map
// (hard-wall box: u vanishes at both ends).
//
// The negative second derivative is exposed in the weight-absorbed
// representation: vectors hold v_i = sqrt(w_i) u(r_i) with w_i the dr
// quadrature weight, the matrix is explicitly symmetrized, and plain
// Euclidean dot products equal L2(dr) inner products of u.

namespace hyperkick {

class RadialGrid {
 public:
  RadialGrid() = default;

  // r(x) = r_min + (r_max - r_min)(e^{sx} - 1)/(e^s - 1): node density falls
  // off exponentially with distance, concentrating points at small r.
  static RadialGrid exponential(int n, double r_min, double r_max, double stretch = 3.0) {
    if (stretch <= 0.0) throw ConstraintViolation("RadialGrid: stretch must be positive");
    return RadialGrid(n, r_min, r_max, stretch);
  }

  static RadialGrid uniform(int n, double r_min, double r_max) {
    return RadialGrid(n, r_min, r_max, 0.0);
  }

  int size() const { return n_; }
  double r_min() const { return r_min_; }
  double r_max() const { return r_max_; }
  double stretch() const { return s_; }
  const std::vector<double>& nodes() const { return r_; }
  const std::vector<double>& weights() const { return w_; }
  const std::string& descriptor() const { return descriptor_; }

  bool same_as(const RadialGrid& other) const { return descriptor_ == other.descriptor_; }

  // diagonals of the symmetric pentadiagonal -(d^2/dr^2), weight-absorbed
  const Eigen::VectorXd& lap0() const { return d0_; }
  const Eigen::VectorXd& lap1() const { return d1_; }
  const Eigen::VectorXd& lap2() const { return d2_; }

  template <typename T>
  void apply_neg_d2(const Eigen::Matrix<T, Eigen::Dynamic, 1>& v,
                    Eigen::Matrix<T, Eigen::Dynamic, 1>& out) const {
    if (v.size() != n_) throw GridMismatch("apply_neg_d2: vector size differs from grid");
    out.resize(n_);
    for (int i = 0; i < n_; ++i) {
      T acc = d0_[i] * v[i];
      if (i >= 1) acc += d1_[i - 1] * v[i - 1];
      if (i + 1 < n_) acc += d1_[i] * v[i + 1];
      if (i >= 2) acc += d2_[i - 2] * v[i - 2];
      if (i + 2 < n_) acc += d2_[i] * v[i + 2];
      out[i] = acc;
    }
  }

  Eigen::MatrixXd neg_d2_dense() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n_, n_);
    for (int i = 0; i < n_; ++i) {
      m(i, i) = d0_[i];
      if (i + 1 < n_) m(i, i + 1) = m(i + 1, i) = d1_[i];
      if (i + 2 < n_) m(i, i + 2) = m(i + 2, i) = d2_[i];
    }
    return m;
  }

  // Continuous (fractional) node index of radius r; useful for interpolating
  // sampled functions, since the nodes are uniform in x.
  double frac_index(double r) const {
    double x;
    if (s_ == 0.0) {
      x = (r - r_min_) / (r_max_ - r_min_);
    } else {
      double y = (r - r_min_) / (r_max_ - r_min_) * (std::exp(s_) - 1.0);
      x = std::log1p(std::max(-0.999999999999, y)) / s_;
    }
    return x / hx_ - 1.0;
  }

  template <typename Vec>
  auto interpolate(const Vec& samples, double r) const -> typename Vec::value_type {
    if (static_cast<int>(samples.size()) != n_)
      throw GridMismatch("interpolate: sample count differs from grid");
    if (r <= r_min_ || r >= r_max_) return typename Vec::value_type(0);
    return hermite_uniform(samples, frac_index(r));
  }

 private:
  RadialGrid(int n, double r_min, double r_max, double s)
      : n_(n), r_min_(r_min), r_max_(r_max), s_(s) {
    if (n < 5) throw ConstraintViolation("RadialGrid: need at least 5 nodes");
    if (r_min < 0.0 || r_max <= r_min)
      throw ConstraintViolation("RadialGrid: need 0 <= r_min < r_max");
    hx_ = 1.0 / (n + 1);
    r_.resize(n);
    w_.resize(n);
    double span = r_max - r_min;
    for (int i = 0; i < n; ++i) {
      double x = (i + 1) * hx_;
      double rp;
      if (s == 0.0) {
        r_[i] = r_min + span * x;
        rp = span;
      } else {
        double es = std::expm1(s);
        r_[i] = r_min + span * std::expm1(s * x) / es;
        rp = span * s * std::exp(s * x) / es;
      }
      w_[i] = rp * hx_;
    }

    // -(d^2/dr^2) in the weight-absorbed representation. With dr/dx = c e^{sx}
    // the operator satisfies the exact similarity
    //   W^{1/2} (-d^2/dr^2) W^{-1/2} = c^{-2} E [-(d^2/dx^2) + s^2/4] E,
    // E = diag(e^{-s x_i}), so the absorbed matrix is symmetric by
    // construction (s = 0 covers the uniform map). -(d^2/dx^2) uses the
    // centered 5-point stencil on the uniform x grid; at the first and last
    // rows the off-grid reference is closed by the antisymmetric image
    // g(-y) = -g(y) about the Dirichlet wall, which keeps the matrix
    // symmetric Toeplitz apart from the modified corner entries and is
    // accurate for modes whose amplitude vanishes toward the wall.
    double c = (s == 0.0) ? span : span * s / std::expm1(s);
    double ih2 = 1.0 / (12.0 * hx_ * hx_);
    d0_.resize(n);
    d1_.resize(n - 1);
    d2_.resize(n - 2);
    auto E = [&](int i) { return std::exp(-s * (i + 1) * hx_); };
    for (int i = 0; i < n; ++i) {
      double L00 = (i == 0 || i == n - 1) ? 29.0 * ih2 : 30.0 * ih2;
      d0_[i] = (L00 + 0.25 * s * s) * E(i) * E(i) / (c * c);
    }
    for (int i = 0; i + 1 < n; ++i) d1_[i] = -16.0 * ih2 * E(i) * E(i + 1) / (c * c);
    for (int i = 0; i + 2 < n; ++i) d2_[i] = ih2 * E(i) * E(i + 2) / (c * c);

    char buf[160];
    std::snprintf(buf, sizeof buf, "%s:n=%d,rmin=%.12g,rmax=%.12g,s=%.12g",
                  s == 0.0 ? "uniform" : "exp", n, r_min, r_max, s);
    descriptor_ = buf;
  }

  int n_ = 0;
  double r_min_ = 0.0, r_max_ = 0.0, s_ = 0.0, hx_ = 0.0;
  std::vector<double> r_, w_;
  Eigen::VectorXd d0_, d1_, d2_;
  std::string descriptor_;
};

}  // namespace hyperkick
