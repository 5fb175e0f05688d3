#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "hyperkick/interaction.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& contents) {
    static int counter = 0;
    path = "hk_test_curve_" + std::to_string(counter++) + ".dat";
    std::ofstream out(path);
    out << contents;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("analytic model curves", "[interaction]") {
  auto g = Curve1D::from_model("gauss:1.25,2.0");
  CHECK_THAT(g(0.0), WithinRel(-1.25, 1e-15));
  CHECK_THAT(g(2.0), WithinRel(-1.25 / std::exp(1.0), 1e-14));
  CHECK(g(50.0) > -1e-100);

  auto p = Curve1D::from_model("pgauss:0.4,2,1.5");
  CHECK_THAT(p(0.0), WithinAbs(0.0, 1e-300));
  // peak sits at r = R sqrt(p/2)
  double rpk = 1.5 * std::sqrt(1.0);
  CHECK(p(rpk) > p(rpk * 0.9));
  CHECK(p(rpk) > p(rpk * 1.1));
  CHECK_THAT(p(1.5), WithinRel(0.4 / std::exp(1.0), 1e-14));

  CHECK_THROWS_AS(Curve1D::from_model("gauss:1.0"), ParseError);
  CHECK_THROWS_AS(Curve1D::from_model("gauss:1.0,abc"), ParseError);
  CHECK_THROWS_AS(Curve1D::from_model("morse:1,2,3"), ParseError);
  CHECK_THROWS_AS(Curve1D::from_model("nocolon"), ParseError);
}

TEST_CASE("tabulated curves with extrapolation tails", "[interaction]") {
  // Lennard-Jones-like well with minimum -1 at r = 1, tabulated
  auto lj = [](double r) { return std::pow(r, -12.0) - 2.0 * std::pow(r, -6.0); };
  std::string table;
  char buf[64];
  for (double r = 0.7; r <= 8.005; r += 0.1) {
    std::snprintf(buf, sizeof buf, "%.10g %.15g\n", r, lj(r));
    table += buf;
  }
  TempFile f("# test potential\n" + table);
  auto pot = PairPotential::from_file(f.path);

  // interpolation region
  CHECK_THAT(pot(3.05), WithinAbs(lj(3.05), 1e-6));
  CHECK_THAT(pot(1.0), WithinAbs(-1.0, 1e-4));
  // r^-6 continuation above the table, anchored at the outermost node
  double v8 = pot(8.0);
  CHECK_THAT(pot(16.0), WithinRel(v8 / 64.0, 1e-6));
  // exponential wall below the table: positive, growing inward
  CHECK(pot(0.7) > 0.0);
  CHECK(pot(0.65) > pot(0.7));
  CHECK(pot(0.5) > pot(0.65));

  CHECK(pot.descriptor().find(f.path) != std::string::npos);
}

TEST_CASE("data file validation", "[interaction]") {
  TempFile bad_cols("1.0 2.0\n2.0 3.0 4.0\n3.0 4.0\n4.0 5.0\n");
  CHECK_THROWS_WITH(Curve1D::from_file(bad_cols.path, Curve1D::LowEnd::clamp,
                                       Curve1D::HighEnd::clamp),
                    Catch::Matchers::ContainsSubstring(":2:"));
  TempFile non_mono("1.0 2.0\n2.0 3.0\n1.5 4.0\n4.0 5.0\n");
  CHECK_THROWS_WITH(Curve1D::from_file(non_mono.path, Curve1D::LowEnd::clamp,
                                       Curve1D::HighEnd::clamp),
                    Catch::Matchers::ContainsSubstring(":3:"));
  TempFile too_short("1.0 2.0\n2.0 3.0\n");
  CHECK_THROWS_AS(
      Curve1D::from_file(too_short.path, Curve1D::LowEnd::clamp, Curve1D::HighEnd::clamp),
      ParseError);
  CHECK_THROWS_AS(Curve1D::from_file("does_not_exist.dat", Curve1D::LowEnd::clamp,
                                     Curve1D::HighEnd::clamp),
                  Error);
}

TEST_CASE("clamped polarizability curves", "[interaction]") {
  TempFile f("1.0 5.0\n2.0 4.0\n3.0 3.0\n4.0 2.0\n");
  auto c = Curve1D::from_file(f.path, Curve1D::LowEnd::clamp, Curve1D::HighEnd::clamp);
  CHECK_THAT(c(0.2), WithinRel(5.0, 1e-15));
  CHECK_THAT(c(9.0), WithinRel(2.0, 1e-15));
  CHECK_THAT(c(2.5), WithinRel(3.5, 1e-12));  // linear data interpolates linearly
}

TEST_CASE("laser kick constant", "[interaction]") {
  // 3.5e14 W/cm^2 with a 331 fs pulse gives the documented kick strength
  auto k = LaserKick::from_intensity(3.5e14, 331.0);
  CHECK_THAT(k.eps_bar_sq, WithinRel(3.5e14 / 3.50945e16, 1e-12));
  CHECK_THAT(k.C, WithinAbs(72.64, 0.05));
  CHECK_THAT(kick_constant(k), WithinRel(k.C, 1e-15));

  // kick strength is linear in intensity
  auto k2 = LaserKick::from_intensity(7.0e14, 331.0);
  CHECK_THAT(k2.C, WithinRel(2.0 * k.C, 1e-12));
  // and scales like the pulse width
  auto k3 = LaserKick::from_intensity(3.5e14, 662.0);
  CHECK_THAT(k3.C, WithinRel(2.0 * k.C, 1e-12));

  CHECK_THROWS_AS(LaserKick::from_intensity(-1.0, 300.0), ConstraintViolation);
  CHECK_THROWS_AS(LaserKick::from_intensity(1e14, 0.0), ConstraintViolation);
}

TEST_CASE("pair terms of the interaction", "[interaction]") {
  auto pot = PairPotential::from_model("gauss:1.0,1.0");
  TriangleGeometry t{1.0, 1.0, 1.0};
  CHECK_THAT(trimer_potential(pot, t), WithinRel(-3.0 / std::exp(1.0), 1e-13));
  CHECK_THROWS_AS(trimer_potential(pot, {1.0, 1.0, 5.0}), ConstraintViolation);

  Polarizabilities pol = Polarizabilities::from_models("gauss:2.0,3.0", "gauss:0.9,3.0");
  // at the magic angle the anisotropic part drops out
  double magic = 1.0 / std::sqrt(3.0);
  CHECK_THAT(laser_dimer(pol, 1.7, magic), WithinRel(pol.iso(1.7), 1e-13));
  // aligned minus anti-aligned difference equals the anisotropy
  double diff = laser_dimer(pol, 1.7, 1.0) - laser_dimer(pol, 1.7, 0.0);
  CHECK_THAT(diff, WithinRel(pol.aniso(1.7), 1e-12));
  CHECK(pol.descriptor().find('|') != std::string::npos);
}
