#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>

#include "hyperkick/angmath.hpp"
#include "hyperkick/units.hpp"
#include "support/test_oracles.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("wigner d recursion matches the explicit sum formula", "[angmath]") {
  double maxdiff = 0.0;
  for (int m1 = -4; m1 <= 4; ++m1)
    for (int m2 = -4; m2 <= 4; ++m2)
      for (double beta : {0.05, 0.4, units::pi / 2, 2.2, units::pi - 0.05}) {
        auto tower = wigner_d_tower(10, m1, m2, beta);
        for (int j = std::max(std::abs(m1), std::abs(m2)); j <= 10; ++j) {
          double ref = oracle::wigner_d_sum(j, m1, m2, beta);
          maxdiff = std::max(maxdiff, std::abs(tower[j] - ref));
        }
      }
  CHECK(maxdiff < 1e-11);
}

TEST_CASE("wigner d closed forms", "[angmath]") {
  for (double beta : {0.0, 0.3, 1.1, 2.7}) {
    CHECK_THAT(wigner_d({1, 0, 0}, beta), WithinAbs(std::cos(beta), 1e-14));
    double c = std::cos(beta);
    CHECK_THAT(wigner_d({2, 0, 0}, beta), WithinAbs(0.5 * (3 * c * c - 1), 1e-14));
  }
  CHECK_THAT(wigner_d({2, 0, 0}, units::pi / 2), WithinAbs(-0.5, 1e-15));
  CHECK_THAT(wigner_d({0, 0, 0}, 1.234), WithinAbs(1.0, 1e-15));
}

TEST_CASE("wigner d orthogonality over beta", "[angmath]") {
  // (1/2) int d^j_{0M} d^j'_{0M} dcos(beta) = delta_jj' / (2j+1)
  auto q = gauss_legendre(24);
  for (int M : {0, 2}) {
    for (int j = M; j <= 8; j += 2)
      for (int jp = M; jp <= 8; jp += 2) {
        double acc = 0.0;
        for (std::size_t i = 0; i < q.size(); ++i) {
          double beta = std::acos(q.x[i]);
          acc += q.w[i] * wigner_d({j, 0, M}, beta) * wigner_d({jp, 0, M}, beta);
        }
        double expected = (j == jp) ? 2.0 / (2.0 * j + 1.0) : 0.0;
        CHECK_THAT(acc, WithinAbs(expected, 1e-12));
      }
  }
}

TEST_CASE("wigner D phase convention and unitarity", "[angmath]") {
  using namespace std::complex_literals;
  EulerAngles ang{0.7, 1.2, -0.4};
  for (int J : {1, 2, 3}) {
    // unitarity: sum_M D*_{M'M} D_{M''M} = delta_{M'M''}
    for (int Mp = -J; Mp <= J; ++Mp)
      for (int Mpp = -J; Mpp <= J; ++Mpp) {
        std::complex<double> acc = 0.0;
        for (int M = -J; M <= J; ++M)
          acc += std::conj(wigner_D({J, Mp, M}, ang)) * wigner_D({J, Mpp, M}, ang);
        CHECK_THAT(std::abs(acc - (Mp == Mpp ? 1.0 : 0.0)), WithinAbs(0.0, 1e-13));
      }
  }
  // explicit phase structure
  auto D = wigner_D({2, 1, -2}, ang);
  auto expected = std::exp(-1i * (1.0 * ang.alpha - 2.0 * ang.gamma)) *
                  oracle::wigner_d_sum(2, 1, -2, ang.beta);
  CHECK_THAT(std::abs(D - expected), WithinAbs(0.0, 1e-14));
}

TEST_CASE("squared ladder couplings", "[angmath]") {
  CHECK_THAT(ladder_A(2, 0, +1), WithinRel(2.0 * std::sqrt(6.0), 1e-14));
  CHECK_THAT(ladder_A(2, 0, -1), WithinRel(2.0 * std::sqrt(6.0), 1e-14));
  CHECK_THAT(ladder_A(4, -2, +1), WithinRel(6.0 * std::sqrt(10.0), 1e-14));
  CHECK(ladder_A(2, 2, +1) == 0.0);   // band edge
  CHECK(ladder_A(2, -2, -1) == 0.0);  // band edge
  CHECK(ladder_A(0, 0, +1) == 0.0);

  // against one-step ladder matrices squared
  for (int J = 1; J <= 6; ++J) {
    auto one_step = [J](int M, int sign) {
      double f = J * (J + 1.0) - double(M) * (M + sign);
      return f > 0.0 ? std::sqrt(f) : 0.0;
    };
    for (int M = -J; M <= J; ++M)
      for (int sign : {+1, -1}) {
        double expect =
            (std::abs(M + 2 * sign) <= J) ? one_step(M, sign) * one_step(M + sign, sign) : 0.0;
        CHECK_THAT(ladder_A(J, M, sign), WithinAbs(expect, 1e-12));
      }
  }
}

TEST_CASE("cos^2 beta decomposition", "[angmath]") {
  for (double beta : {0.0, 0.2, 0.9, 1.7, 3.0}) {
    auto split = cos2beta_decomposition(beta);
    double c = std::cos(beta);
    CHECK_THAT(split.value, WithinAbs(c * c, 1e-15));
    CHECK_THAT(split.iso_coeff, WithinAbs(1.0 / 3.0, 1e-16));
    CHECK_THAT(split.quad_coeff, WithinAbs(2.0 / 3.0, 1e-16));
    CHECK_THAT(split.iso_coeff + split.quad_coeff * wigner_d({2, 0, 0}, beta),
               WithinAbs(split.value, 1e-15));
  }
}

TEST_CASE("alignment overlaps between rotation functions", "[angmath]") {
  CHECK_THAT(overlap_D(0, 2, 0), WithinRel(1.0 / std::sqrt(5.0), 1e-13));
  CHECK_THAT(overlap_D(2, 0, 0), WithinRel(1.0 / std::sqrt(5.0), 1e-13));
  CHECK_THAT(overlap_D(2, 2, 0), WithinRel(2.0 / 7.0, 1e-13));
  CHECK(overlap_D(0, 4, 0) == 0.0);
  // the quadrupole part averages to zero over an isotropic state
  CHECK_THAT(overlap_D(0, 0, 0), WithinAbs(0.0, 1e-14));

  // against the closed 3j-product formula
  for (int Jp : {0, 2, 4, 6})
    for (int J : {0, 2, 4, 6})
      for (int M = -std::min(J, Jp); M <= std::min(J, Jp); M += 2) {
        double ref = ((M % 2) ? -1.0 : 1.0) * std::sqrt((2.0 * J + 1.0) * (2.0 * Jp + 1.0)) *
                     oracle::wigner3j(Jp, 2, J, 0, 0, 0) * oracle::wigner3j(Jp, 2, J, -M, 0, M);
        CHECK_THAT(overlap_D(Jp, J, M), WithinAbs(ref, 1e-13));
      }
}
