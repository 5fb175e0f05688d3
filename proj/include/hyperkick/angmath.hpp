#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <vector>

#include "hyperkick/quadrature.hpp"

// Rotation-matrix algebra for the body-frame expansion: Wigner d/D functions,
// squared ladder couplings, and the alignment-operator overlaps between
// rotational basis functions. Euler angles follow the z-y-z convention with
// D^J_{M'M}(a,b,g) = exp(-i M' a) d^J_{M'M}(b) exp(-i M g).

namespace hyperkick {

struct EulerAngles {
  double alpha = 0.0;
  double beta = 0.0;
  double gamma = 0.0;
};

struct RotIndex {
  int J = 0;
  int Mrow = 0;  // lab-frame projection
  int Mcol = 0;  // body-frame projection

  void validate() const {
    if (J < 0 || std::abs(Mrow) > J || std::abs(Mcol) > J)
      throw std::invalid_argument("RotIndex: need J >= 0 and |M| <= J");
  }
};

namespace detail {

// sqrt of a ratio of factorials via lgamma; arguments are small (J <= ~100)
// so this is exact to double rounding.
inline double sqrt_fact_ratio(double num_lg, double den_lg) {
  return std::exp(0.5 * (num_lg - den_lg));
}

inline double lfact(int n) { return std::lgamma(static_cast<double>(n) + 1.0); }

}  // namespace detail

// d^j_{m1,m2}(beta) for j = 0..j_max in one upward sweep (entries below
// max(|m1|,|m2|) are zero). Three-term recursion in j; the seed at
// j0 = max(|m1|,|m2|) is the single-term closed form, so no factorial sums
// appear at any j.
inline std::vector<double> wigner_d_tower(int j_max, int m1, int m2, double beta) {
  if (j_max < 0) throw std::invalid_argument("wigner_d_tower: j_max < 0");
  std::vector<double> d(static_cast<std::size_t>(j_max) + 1, 0.0);
  const int j0 = std::max(std::abs(m1), std::abs(m2));
  if (j0 > j_max) return d;

  const double c = std::cos(0.5 * beta);
  const double s = std::sin(0.5 * beta);
  double seed;
  if (j0 == 0) {
    seed = 1.0;
  } else if (std::abs(m2) == j0) {
    // column edge: d^j_{m1,±j}
    double f = detail::sqrt_fact_ratio(detail::lfact(2 * j0),
                                       detail::lfact(j0 + m1) + detail::lfact(j0 - m1));
    seed = (m2 > 0) ? f * std::pow(c, j0 + m1) * std::pow(s, j0 - m1)
                    : f * std::pow(c, j0 - m1) * std::pow(s, j0 + m1) *
                          ((j0 + m1) % 2 ? -1.0 : 1.0);
  } else {
    // row edge via d^j_{m1,m2} = (-1)^{m1-m2} d^j_{m2,m1}
    double f = detail::sqrt_fact_ratio(detail::lfact(2 * j0),
                                       detail::lfact(j0 + m2) + detail::lfact(j0 - m2));
    double t = (m1 > 0) ? f * std::pow(c, j0 + m2) * std::pow(s, j0 - m2)
                        : f * std::pow(c, j0 - m2) * std::pow(s, j0 + m2) *
                              ((j0 + m2) % 2 ? -1.0 : 1.0);
    seed = ((m1 - m2) % 2 ? -1.0 : 1.0) * t;
  }
  d[j0] = seed;

  const double x = std::cos(beta);
  double dm1 = 0.0;  // d^{j-1}, zero below the seed by the band-edge factor
  int jstart = j0;
  if (j0 == 0 && j_max >= 1) {
    // the j = 0 recursion step is degenerate (coefficient a vanishes);
    // d^1_{00} = cos(beta) seeds the sweep instead
    d[1] = x;
    dm1 = d[0];
    jstart = 1;
  }
  for (int j = jstart; j < j_max; ++j) {
    double a = j * std::sqrt((double((j + 1) * (j + 1)) - m1 * m1) *
                             (double((j + 1) * (j + 1)) - m2 * m2));
    double b = (j + 1) * std::sqrt((double(j * j) - m1 * m1) * (double(j * j) - m2 * m2));
    double next = ((2 * j + 1) * (j * (j + 1.0) * x - m1 * m2) * d[j] - b * dm1) / a;
    dm1 = d[j];
    d[j + 1] = next;
  }
  return d;
}

inline double wigner_d(const RotIndex& idx, double beta) {
  idx.validate();
  return wigner_d_tower(idx.J, idx.Mrow, idx.Mcol, beta)[idx.J];
}

inline std::complex<double> wigner_D(const RotIndex& idx, const EulerAngles& ang) {
  using namespace std::complex_literals;
  double d = wigner_d(idx, ang.beta);
  return std::exp(-1i * (idx.Mrow * ang.alpha + idx.Mcol * ang.gamma)) * d;
}

// Squared body-frame ladder coupling A^±_{J,M}: matrix element of J_±^2
// between body projections M and M±2. Zero at the band edge (|M±2| > J).
inline double ladder_A(int J, int M, int sign) {
  if (sign != 1 && sign != -1) throw std::invalid_argument("ladder_A: sign must be ±1");
  if (J < 0 || std::abs(M) > J) throw std::invalid_argument("ladder_A: need |M| <= J");
  if (std::abs(M + 2 * sign) > J) return 0.0;
  double f1 = J * (J + 1.0) - double(M) * (M + sign);
  double f2 = J * (J + 1.0) - double(M + sign) * (M + 2.0 * sign);
  if (f1 <= 0.0 || f2 <= 0.0) return 0.0;
  return std::sqrt(f1) * std::sqrt(f2);
}

// cos^2(beta) resolved onto isotropic + quadrupole rotation functions:
// cos^2 b = 1/3 + (2/3) d^2_{00}(b). Returned with the fixed coefficients so
// callers can reuse the split.
struct Cos2BetaSplit {
  double value;
  double iso_coeff;   // 1/3
  double quad_coeff;  // 2/3
};

inline Cos2BetaSplit cos2beta_decomposition(double beta) {
  double x = std::cos(beta);
  double d200 = 0.5 * (3.0 * x * x - 1.0);
  return {1.0 / 3.0 + 2.0 / 3.0 * d200, 1.0 / 3.0, 2.0 / 3.0};
}

// Alignment overlap between zero-lab-projection rotation functions,
//   D~^(J',J)_M = sqrt((2J+1)(2J'+1)) / 2 * Int d^{J'}_{0M} d^2_{00} d^J_{0M} dcos(b),
// the exact zero for |J - J'| > 2 is returned without quadrature. Gauss-
// Legendre in cos(b) with polynomial exactness beyond degree 2 max(J,J') + 4.
inline double overlap_D(int Jp, int J, int M) {
  if (Jp < 0 || J < 0) throw std::invalid_argument("overlap_D: negative J");
  if (std::abs(M) > std::min(Jp, J))
    throw std::invalid_argument("overlap_D: need |M| <= min(J, J')");
  if (std::abs(J - Jp) > 2) return 0.0;
  int jmax = std::max(Jp, J);
  QuadratureRule q = gauss_legendre(jmax + 3);
  double acc = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    double beta = std::acos(q.x[i]);
    double dJp = wigner_d({Jp, 0, M}, beta);
    double dJ = wigner_d({J, 0, M}, beta);
    double d200 = 0.5 * (3.0 * q.x[i] * q.x[i] - 1.0);
    acc += q.w[i] * dJp * d200 * dJ;
  }
  return 0.5 * std::sqrt((2.0 * J + 1.0) * (2.0 * Jp + 1.0)) * acc;
}

}  // namespace hyperkick
