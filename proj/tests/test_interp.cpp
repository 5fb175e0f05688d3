#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "hyperkick/interp.hpp"
#include "hyperkick/units.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;

TEST_CASE("cubic spline interpolates nodes exactly and is accurate between", "[interp]") {
  int n = 21;
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = units::pi * i / (n - 1);
    y[i] = std::sin(x[i]);
  }
  CubicSpline s(x, y);
  for (int i = 0; i < n; ++i) CHECK_THAT(s(x[i]), WithinAbs(y[i], 1e-15));
  // interior accuracy (natural end conditions degrade only the edge panels)
  for (double t = 0.3; t < units::pi - 0.3; t += 0.05) {
    CHECK_THAT(s(t), WithinAbs(std::sin(t), 1e-4));
    CHECK_THAT(s.derivative(t), WithinAbs(std::cos(t), 1e-3));
  }
}

TEST_CASE("cubic spline reproduces straight lines", "[interp]") {
  CubicSpline s({0.0, 0.7, 1.1, 2.0, 3.5}, {1.0, 2.4, 3.2, 5.0, 8.0});
  for (double t : {0.1, 0.9, 1.6, 2.9}) CHECK_THAT(s(t), WithinAbs(1.0 + 2.0 * t, 1e-13));
  CHECK_THAT(s.derivative(1.234), WithinAbs(2.0, 1e-13));
}

TEST_CASE("cubic spline validates input", "[interp]") {
  CHECK_THROWS(CubicSpline({1.0}, {2.0}));
  CHECK_THROWS(CubicSpline({0.0, 1.0, 1.0}, {0.0, 1.0, 2.0}));
  CHECK_THROWS(CubicSpline({0.0, 1.0}, {0.0, 1.0, 2.0}));
}

TEST_CASE("uniform Hermite interpolation", "[interp]") {
  std::vector<double> lin{1.0, 3.0, 5.0, 7.0, 9.0};
  for (double t : {0.0, 0.4, 1.0, 2.5, 3.9, 4.0}) {
    CHECK_THAT(hermite_uniform(lin, t), WithinAbs(1.0 + 2.0 * t, 1e-14));
  }
  // clamps outside the sampled range
  CHECK_THAT(hermite_uniform(lin, -1.0), WithinAbs(1.0, 1e-15));
  CHECK_THAT(hermite_uniform(lin, 9.0), WithinAbs(9.0, 1e-15));

  std::vector<double> smooth(41);
  for (int i = 0; i < 41; ++i) smooth[i] = std::exp(-0.1 * i) * std::cos(0.2 * i);
  for (double t : {3.3, 17.7, 30.1}) {
    double exact = std::exp(-0.1 * t) * std::cos(0.2 * t);
    CHECK_THAT(hermite_uniform(smooth, t), WithinAbs(exact, 5e-4));
  }
}
