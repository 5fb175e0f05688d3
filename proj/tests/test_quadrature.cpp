#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <numeric>

#include "hyperkick/quadrature.hpp"
#include "hyperkick/units.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("Gauss-Legendre nodes and weights", "[quadrature]") {
  for (int n : {1, 2, 5, 16, 33, 64}) {
    auto q = gauss_legendre(n);
    REQUIRE(q.size() == static_cast<std::size_t>(n));
    double wsum = std::accumulate(q.w.begin(), q.w.end(), 0.0);
    CHECK_THAT(wsum, WithinRel(2.0, 1e-14));
    for (int i = 0; i < n; ++i) {
      CHECK_THAT(q.x[i] + q.x[n - 1 - i], WithinAbs(0.0, 1e-15));  // symmetric nodes
      CHECK(q.w[i] > 0.0);
    }
  }
}

TEST_CASE("Gauss-Legendre is exact through degree 2n-1", "[quadrature]") {
  auto q = gauss_legendre(10);
  double s18 = 0.0, s19 = 0.0, s20 = 0.0;
  for (int i = 0; i < 10; ++i) {
    s18 += q.w[i] * std::pow(q.x[i], 18);
    s19 += q.w[i] * std::pow(q.x[i], 19);
    s20 += q.w[i] * std::pow(q.x[i], 20);
  }
  CHECK_THAT(s18, WithinRel(2.0 / 19.0, 1e-13));  // exact
  CHECK_THAT(s19, WithinAbs(0.0, 1e-15));         // odd, exact zero
  CHECK(std::abs(s20 - 2.0 / 21.0) > 1e-8);       // degree 2n is allowed to miss
}

TEST_CASE("interval mapping", "[quadrature]") {
  auto q = map_to_interval(gauss_legendre(12), 0.0, units::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q.w[i] * std::sin(q.x[i]);
  CHECK_THAT(s, WithinRel(2.0, 1e-12));
}

TEST_CASE("midpoint rule is spectral for periodic integrands", "[quadrature]") {
  // int_0^{2pi} exp(cos x) dx = 2 pi I_0(1)
  double expected = 2.0 * units::pi * 1.2660658777520084;
  auto q = uniform_midpoint(32, 0.0, 2.0 * units::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) s += q.w[i] * std::exp(std::cos(q.x[i]));
  CHECK_THAT(s, WithinRel(expected, 1e-14));
}
