#pragma once

// Independent reference implementations used only by the test suite. These
// deliberately avoid the library's algorithms (recursions, quadratures) so a
// bug cannot cancel on both sides of a comparison.

#include <cmath>
#include <functional>
#include <stdexcept>

namespace oracle {

inline double lfact(int n) {
  if (n < 0) throw std::invalid_argument("lfact: negative argument");
  return std::lgamma(static_cast<double>(n) + 1.0);
}

// Wigner 3j symbol from the Racah single-sum formula.
inline double wigner3j(int j1, int j2, int j3, int m1, int m2, int m3) {
  if (m1 + m2 + m3 != 0) return 0.0;
  if (j3 < std::abs(j1 - j2) || j3 > j1 + j2) return 0.0;
  if (std::abs(m1) > j1 || std::abs(m2) > j2 || std::abs(m3) > j3) return 0.0;
  double logdelta = 0.5 * (lfact(j1 + j2 - j3) + lfact(j1 - j2 + j3) + lfact(-j1 + j2 + j3) -
                           lfact(j1 + j2 + j3 + 1));
  double logpre = 0.5 * (lfact(j1 + m1) + lfact(j1 - m1) + lfact(j2 + m2) + lfact(j2 - m2) +
                         lfact(j3 + m3) + lfact(j3 - m3));
  int tmin = std::max({0, j2 - j3 - m1, j1 - j3 + m2});
  int tmax = std::min({j1 + j2 - j3, j1 - m1, j2 + m2});
  double sum = 0.0;
  for (int t = tmin; t <= tmax; ++t) {
    double logterm = lfact(t) + lfact(j3 - j2 + m1 + t) + lfact(j3 - j1 - m2 + t) +
                     lfact(j1 + j2 - j3 - t) + lfact(j1 - m1 - t) + lfact(j2 + m2 - t);
    sum += ((t % 2) ? -1.0 : 1.0) * std::exp(logdelta + logpre - logterm);
  }
  int phase = j1 - j2 - m3;
  return ((phase % 2) ? -1.0 : 1.0) * sum;
}

// Wigner small-d from the explicit sum over s (convention
// d^j_{m'm}(beta) = <j m'| exp(-i beta J_y) |j m>).
inline double wigner_d_sum(int j, int mp, int m, double beta) {
  if (std::abs(mp) > j || std::abs(m) > j) return 0.0;
  double c = std::cos(0.5 * beta), s = std::sin(0.5 * beta);
  double logpre = 0.5 * (lfact(j + mp) + lfact(j - mp) + lfact(j + m) + lfact(j - m));
  int smin = std::max(0, m - mp);
  int smax = std::min(j + m, j - mp);
  double sum = 0.0;
  for (int k = smin; k <= smax; ++k) {
    double logden = lfact(j + m - k) + lfact(k) + lfact(mp - m + k) + lfact(j - mp - k);
    double term = std::exp(logpre - logden) * std::pow(c, 2 * j + m - mp - 2 * k) *
                  std::pow(s, mp - m + 2 * k);
    sum += (((mp - m + k) % 2) ? -1.0 : 1.0) * term;
  }
  return sum;
}

// Composite Simpson on [a, b] with n panels (n even).
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
  if (n % 2) ++n;
  double h = (b - a) / n, acc = f(a) + f(b);
  for (int i = 1; i < n; ++i) acc += f(a + i * h) * ((i % 2) ? 4.0 : 2.0);
  return acc * h / 3.0;
}

}  // namespace oracle
