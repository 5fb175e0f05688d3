#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace hyperkick {

// Natural cubic spline on strictly increasing nodes. Evaluation outside the
// node range is the caller's job (the interaction curves wrap this with their
// own extrapolation policies).
class CubicSpline {
 public:
  CubicSpline() = default;

  CubicSpline(std::vector<double> x, std::vector<double> y)
      : x_(std::move(x)), y_(std::move(y)) {
    std::size_t n = x_.size();
    if (n < 2 || y_.size() != n)
      throw std::invalid_argument("CubicSpline: need >= 2 matching nodes");
    for (std::size_t i = 1; i < n; ++i)
      if (!(x_[i] > x_[i - 1]))
        throw std::invalid_argument("CubicSpline: nodes must strictly increase");
    // second derivatives from the natural-BC tridiagonal system
    m_.assign(n, 0.0);
    if (n == 2) return;
    std::vector<double> diag(n, 0.0), rhs(n, 0.0), sub(n, 0.0);
    for (std::size_t i = 1; i + 1 < n; ++i) {
      double hl = x_[i] - x_[i - 1], hr = x_[i + 1] - x_[i];
      sub[i] = hl;
      diag[i] = 2.0 * (hl + hr);
      rhs[i] = 6.0 * ((y_[i + 1] - y_[i]) / hr - (y_[i] - y_[i - 1]) / hl);
    }
    std::vector<double> c(n, 0.0);
    for (std::size_t i = 2; i + 1 < n; ++i) {
      double w = sub[i] / diag[i - 1];
      diag[i] -= w * (x_[i] - x_[i - 1]);  // upper diag equals h_{i-1}
      rhs[i] -= w * rhs[i - 1];
    }
    for (std::size_t i = n - 2; i >= 1; --i) {
      double upper = (i + 2 < n) ? (x_[i + 1] - x_[i]) : 0.0;
      c[i] = (rhs[i] - upper * c[i + 1]) / diag[i];
      if (i == 1) break;
    }
    m_ = std::move(c);
  }

  double x_min() const { return x_.front(); }
  double x_max() const { return x_.back(); }
  const std::vector<double>& nodes() const { return x_; }
  const std::vector<double>& values() const { return y_; }

  double operator()(double x) const {
    std::size_t i = locate(x);
    double h = x_[i + 1] - x_[i];
    double a = (x_[i + 1] - x) / h, b = (x - x_[i]) / h;
    return a * y_[i] + b * y_[i + 1] +
           ((a * a * a - a) * m_[i] + (b * b * b - b) * m_[i + 1]) * h * h / 6.0;
  }

  double derivative(double x) const {
    std::size_t i = locate(x);
    double h = x_[i + 1] - x_[i];
    double a = (x_[i + 1] - x) / h, b = (x - x_[i]) / h;
    return (y_[i + 1] - y_[i]) / h +
           h / 6.0 * ((3.0 * b * b - 1.0) * m_[i + 1] - (3.0 * a * a - 1.0) * m_[i]);
  }

 private:
  std::size_t locate(double x) const {
    std::size_t lo = 0, hi = x_.size() - 1;
    if (x <= x_[0]) return 0;
    if (x >= x_[hi]) return hi - 1;
    while (hi - lo > 1) {
      std::size_t mid = (lo + hi) / 2;
      (x_[mid] <= x ? lo : hi) = mid;
    }
    return lo;
  }

  std::vector<double> x_, y_, m_;
};

// Cubic Hermite (Catmull-Rom) interpolation of a uniformly sampled sequence
// at fractional index t in [0, n-1]; one-sided slopes at the ends. Used for
// off-node evaluation on mapped uniform grids.
template <typename Vec>
auto hermite_uniform(const Vec& f, double t) -> typename Vec::value_type {
  using T = typename Vec::value_type;
  long n = static_cast<long>(f.size());
  if (n == 0) throw std::invalid_argument("hermite_uniform: empty sequence");
  if (n == 1) return f[0];
  if (t <= 0.0) return f[0];
  if (t >= n - 1) return f[n - 1];
  long i = static_cast<long>(t);
  if (i > n - 2) i = n - 2;
  double u = t - i;
  T fm = (i > 0) ? f[i - 1] : f[0] * 2.0 - f[1];
  T fp = (i + 2 < n) ? f[i + 2] : f[n - 1] * 2.0 - f[n - 2];
  T d0 = (f[i + 1] - fm) * 0.5;
  T d1 = (fp - f[i]) * 0.5;
  double u2 = u * u, u3 = u2 * u;
  return f[i] * (2 * u3 - 3 * u2 + 1) + d0 * (u3 - 2 * u2 + u) + f[i + 1] * (-2 * u3 + 3 * u2) +
         d1 * (u3 - u2);
}

}  // namespace hyperkick
