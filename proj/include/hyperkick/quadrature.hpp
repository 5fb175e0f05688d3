#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace hyperkick {

struct QuadratureRule {
  std::vector<double> x;
  std::vector<double> w;
  std::size_t size() const { return x.size(); }
};

// Gauss–Legendre rule on [-1, 1], exact for polynomials up to degree 2n-1.
// Newton iteration on P_n with the asymptotic initial guess; nodes symmetric.
inline QuadratureRule gauss_legendre(int n) {
  if (n < 1) throw std::invalid_argument("gauss_legendre: n must be >= 1");
  QuadratureRule q;
  q.x.resize(n);
  q.w.resize(n);
  const double pi = 3.14159265358979323846;
  int m = (n + 1) / 2;
  for (int i = 0; i < m; ++i) {
    double x = std::cos(pi * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      // recurrence for P_n(x) and P'_n(x)
      double p0 = 1.0, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      pp = n * (x * p1 - p0) / (x * x - 1.0);
      double dx = -p1 / pp;
      x += dx;
      if (std::abs(dx) < 1e-15) break;
    }
    q.x[i] = -x;
    q.x[n - 1 - i] = x;
    double w = 2.0 / ((1.0 - x * x) * pp * pp);
    q.w[i] = w;
    q.w[n - 1 - i] = w;
  }
  if (n % 2 == 1) q.x[n / 2] = 0.0;  // kill roundoff in the central node
  return q;
}

// Affine image of a rule on [a, b].
inline QuadratureRule map_to_interval(const QuadratureRule& q, double a, double b) {
  QuadratureRule r = q;
  double c = 0.5 * (a + b), h = 0.5 * (b - a);
  for (std::size_t i = 0; i < q.size(); ++i) {
    r.x[i] = c + h * q.x[i];
    r.w[i] = h * q.w[i];
  }
  return r;
}

// Midpoint rule on [a, b); spectrally accurate for smooth (b-a)-periodic
// integrands, plain second order otherwise.
inline QuadratureRule uniform_midpoint(int n, double a, double b) {
  if (n < 1) throw std::invalid_argument("uniform_midpoint: n must be >= 1");
  QuadratureRule q;
  q.x.resize(n);
  q.w.resize(n);
  double h = (b - a) / n;
  for (int i = 0; i < n; ++i) {
    q.x[i] = a + (i + 0.5) * h;
    q.w[i] = h;
  }
  return q;
}

}  // namespace hyperkick
