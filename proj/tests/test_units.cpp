#include <catch2/catch_amalgamated.hpp>

#include "hyperkick/units.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("energy conversions round-trip", "[units]") {
  for (double mk : {1.0, 87.9, -126.4, 1.6e-3}) {
    CHECK_THAT(units::hartree_to_mk(units::mk_to_hartree(mk)), WithinRel(mk, 1e-14));
  }
  // 1 hartree in millikelvin
  CHECK_THAT(units::hartree_to_mk(1.0), WithinRel(315775024.80407, 1e-12));
}

TEST_CASE("time conversions", "[units]") {
  // 1 fs = 41.34137 atomic time units
  CHECK_THAT(units::fs_to_atu(1.0), WithinRel(41.341373, 1e-6));
  // the 331 fs pulse width in atomic units
  CHECK_THAT(units::fs_to_atu(331.0), WithinAbs(13684.0, 0.1));
  CHECK_THAT(units::atu_to_ps(units::ps_to_atu(3.7)), WithinRel(3.7, 1e-14));
}

TEST_CASE("characteristic timescale of an energy splitting", "[units]") {
  CHECK_THAT(units::timescale_of_energy(2.0 * units::pi), WithinRel(1.0, 1e-15));
  // a splitting of 1 microhartree beats with a 151.98 ps period
  CHECK_THAT(units::atu_to_ps(units::timescale_of_energy(1e-6)), WithinAbs(151.98, 0.01));
  CHECK_THROWS_AS(units::timescale_of_energy(0.0), ZeroEnergy);
}

TEST_CASE("three-body hyper-mass", "[units]") {
  CHECK_THAT(units::hyper_mass(units::helium_mass_me),
             WithinRel(units::helium_mass_me / std::sqrt(3.0), 1e-15));
  CHECK(units::hyper_mass(1.0) < 1.0);
}
