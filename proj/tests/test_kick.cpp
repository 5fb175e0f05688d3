#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <complex>
#include <memory>
#include <vector>

#include "hyperkick/kick.hpp"
#include "hyperkick/stationary.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;
using cplx = std::complex<double>;

namespace {

// Shared small system: a bound three-atom state (mass 30, Gaussian pair
// attraction) solved once, plus a J <= 4 target basis on the same theta grid.
struct KickWorld {
  RadialGrid grid = RadialGrid::exponential(180, 1.5, 60.0, 3.0);
  ChannelBasis basis_g = ChannelBasis::build(ChannelSet(0, 6, 1), 96);
  ChannelBasis basis_t = ChannelBasis::build(ChannelSet(4, 12, 2), basis_g.grid());
  Polarizabilities pol = Polarizabilities::from_models("gauss:0.008,6.0", "gauss:0.02,5.0");
  std::vector<StationaryState> states;
  KickQuadrature quad;
  LaserKick kick = LaserKick::from_intensity(3.0e14, 150.0);

  KickWorld() {
    auto table = std::make_shared<CouplingTable>(
        CouplingTable::build(basis_g, grid, PairPotential{Curve1D::gauss(0.05, 4.0)}, 64));
    states = solve_trimer_bound(basis_g, table, grid, 30.0, 1);
    quad.rho = grid;
    quad.J_max = 4;
  }
};

const KickWorld& world() {
  static KickWorld w;
  return w;
}

// Brute-force Euler kernel: Gauss-Legendre in beta times a trapezoid rule in
// gamma, with the phase assembled from the per-bond potential and lab-frame
// bond angles. Independent of the quadratic-form reduction inside the
// library, so it checks that reduction end to end.
cplx kernel_brute(int J, int M, const LaserKick& kick, const Polarizabilities& pol,
                  const HyperPoint& pt, int nb, int ng) {
  auto gl = gauss_legendre(nb);
  auto g = distance_ratios(pt.theta, pt.phi);
  cplx acc = 0.0;
  for (int ib = 0; ib < nb; ++ib) {
    double beta = std::acos(gl.x[ib]);
    double dj = wigner_d(RotIndex{J, 0, M}, beta);
    cplx inner = 0.0;
    for (int ig = 0; ig < ng; ++ig) {
      double gamma = (ig + 0.5) * 2.0 * units::pi / ng;
      auto ct = lab_angles(pt, {0.0, beta, gamma});
      double phase = 0.0;
      for (int c = 0; c < 3; ++c) phase += laser_dimer(pol, pt.rho * g[c], ct[c]);
      inner += std::polar(1.0, M * gamma + kick.C * phase);
    }
    acc += gl.w[ib] * dj * inner * (2.0 * units::pi / ng);
  }
  return std::sqrt(2.0 * J + 1.0) / (4.0 * units::pi) * acc;
}

}  // namespace

TEST_CASE("kick inputs are validated", "[kick]") {
  const KickWorld& w = world();

  KickQuadrature q;
  CHECK_THROWS_AS(q.validate(), ConstraintViolation);  // empty radial grid
  q.rho = w.grid;
  CHECK_NOTHROW(q.validate());
  q.phi_sector = 3;
  CHECK_THROWS_AS(q.validate(), ConstraintViolation);
  q.phi_sector = 40;
  q.beta_points = 4;
  CHECK_THROWS_AS(q.validate(), ConstraintViolation);
  q.beta_points = 48;
  q.J_max = 3;
  CHECK_THROWS_AS(q.validate(), ConstraintViolation);
  q.J_max = 4;
  q.table_spacing = -0.01;
  CHECK_THROWS_AS(q.validate(), ConstraintViolation);

  // initial state must be J = 0 with the basis channels
  StationaryState rotating{-0.01, 2, WavePacket(ChannelSet(2, 6, 1), w.grid)};
  CHECK_THROWS_AS(apply_delta_kick(rotating, w.basis_g, w.kick, w.pol, w.quad),
                  ConstraintViolation);
  WavePacket wide(ChannelSet(0, 12, 1), w.grid);
  wide.block(0)(0, 50) = 1.0;
  StationaryState mismatched{-0.01, 0, wide};
  CHECK_THROWS_AS(apply_delta_kick(mismatched, w.basis_g, w.kick, w.pol, w.quad), GridMismatch);

  // theta quadrature must be the uniform midpoint rule
  std::vector<double> uneven(16);
  for (int i = 0; i < 16; ++i) uneven[i] = units::pi / 4.0 * (i + 0.5) * (i + 0.5) / 260.0;
  ChannelBasis skew = ChannelBasis::build(ChannelSet(0, 0, 0), ThetaGrid(uneven));
  WavePacket single(ChannelSet(0, 0, 0), w.grid);
  single.block(0)(0, 50) = 1.0;
  StationaryState toy{-0.01, 0, single};
  CHECK_THROWS_AS(apply_delta_kick(toy, skew, w.kick, w.pol, w.quad), QuadratureMismatch);

  KickField field = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad);

  // projection guards: grid identity, kernel coverage, phi resolution
  ChannelBasis other_grid = ChannelBasis::build(ChannelSet(0, 6, 0), 64);
  CHECK_THROWS_AS(project_to_channels(field, other_grid), QuadratureMismatch);
  ChannelBasis too_high = ChannelBasis::build(ChannelSet(6, 0, 0), w.basis_g.grid());
  CHECK_THROWS_AS(project_to_channels(field, too_high), ConstraintViolation);
  KickQuadrature coarse = w.quad;
  coarse.phi_sector = 4;
  KickField narrow = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, coarse);
  ChannelBasis wide_m = ChannelBasis::build(ChannelSet(0, 18, 0), w.basis_g.grid());
  CHECK_THROWS_AS(project_to_channels(narrow, wide_m), QuadratureMismatch);

  // kernel_at index guards
  CHECK_THROWS_AS(field.kernel_at(3, 0, {6.0, 0.3, 0.5}), ConstraintViolation);
  CHECK_THROWS_AS(field.kernel_at(2, 1, {6.0, 0.3, 0.5}), ConstraintViolation);
  CHECK_THROWS_AS(field.kernel_at(6, 0, {6.0, 0.3, 0.5}), ConstraintViolation);

  // decomposition guards: reference count, J, channels
  std::vector<StationaryState> three(3, w.states[0]);
  CHECK_THROWS_AS(decompose(field, w.basis_t, three), ConstraintViolation);
  CHECK_THROWS_AS(decompose(field, w.basis_t, {rotating}), ConstraintViolation);
  CHECK_THROWS_AS(decompose(field, w.basis_t, {mismatched}), GridMismatch);

  // intensity scan needs three distinct intensities
  CHECK_THROWS_AS(intensity_scan({1e14, 2e14}, 150.0, w.states[0], w.basis_g, w.pol, w.quad),
                  FitUnderdetermined);
  CHECK_THROWS_AS(
      intensity_scan({1e14, 1e14, 1e14}, 150.0, w.states[0], w.basis_g, w.pol, w.quad),
      FitUnderdetermined);
}

TEST_CASE("zero-strength kick leaves the state untouched", "[kick]") {
  const KickWorld& w = world();
  LaserKick off = LaserKick::from_intensity(0.0, 150.0);
  KickField field = apply_delta_kick(w.states[0], w.basis_g, off, w.pol, w.quad);

  // projecting straight back reproduces the stationary coefficients
  WavePacket back = project_to_channels(field, w.basis_g);
  double dmax = 0.0;
  for (int r = 0; r < back.block(0).rows(); ++r)
    for (int k = 0; k < w.grid.size(); ++k)
      dmax = std::max(dmax, std::abs(back.block(0)(r, k) - field.ground().block(0)(r, k)));
  CHECK(dmax < 1e-14);

  // the decomposition sees a pure J = 0 ground state
  DecompositionReport rep = decompose(field, w.basis_t, w.states);
  CHECK_THAT(rep.populations[0].P_M[0], WithinAbs(1.0, 1e-13));
  CHECK_THAT(rep.references[0].direct_sq, WithinAbs(1.0, 1e-13));
  CHECK_THAT(rep.references[0].basis_sq, WithinAbs(1.0, 1e-13));
  for (const auto& p : rep.populations)
    if (p.J > 0) {
      CHECK(p.direct < 1e-24);
      CHECK(p.basis < 1e-24);
    }
  CHECK(std::abs(rep.unbound_direct_sq) < 1e-12);
  CHECK(std::abs(rep.unbound_basis_sq) < 1e-12);
}

TEST_CASE("Euler kernels match brute-force quadrature", "[kick]") {
  const KickWorld& w = world();
  KickField field = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad);

  // direct single-point kernels against the independent 2D quadrature
  double worst = 0.0;
  for (HyperPoint pt : {HyperPoint{6.0, 0.31, 0.52}, HyperPoint{11.0, 0.62, 0.10},
                        HyperPoint{17.0, 0.15, 0.95}})
    for (int J = 0; J <= 4; J += 2)
      for (int M = -J; M <= J; M += 2)
        worst = std::max(worst,
                         std::abs(field.kernel_at(J, M, pt) -
                                  kernel_brute(J, M, w.kick, w.pol, pt, 64, 512)));
  CHECK(worst < 1e-13);

  // tabulated slice kernels against the direct evaluation
  detail::ShapeSlice s;
  field.slice_terms(100, s);
  std::vector<Eigen::MatrixXcd> K;
  field.slice_kernels(s, 4, K);
  const auto& th = w.basis_g.grid().nodes();
  double dtab = 0.0;
  for (int i = 0; i < field.theta_count(); i += 17)
    for (int j = 0; j < field.phi_count(); j += 7) {
      HyperPoint pt{w.grid.nodes()[100], th[i], field.phi_node(j)};
      for (int J = 0; J <= 4; J += 2)
        for (int M = -J; M <= J; M += 2)
          dtab = std::max(dtab,
                          std::abs(K[KickField::kernel_slot(J, M)](i, j) -
                                   field.kernel_at(J, M, pt)));
    }
  CHECK(dtab < 1e-7);
}

TEST_CASE("channel projection matches brute-force overlaps", "[kick]") {
  const KickWorld& w = world();
  KickField field = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad);
  WavePacket pk = project_to_channels(field, w.basis_t);

  // one radial slice, assembled from the brute Euler kernel and the discrete
  // (theta, phi) rule
  const int k = 100;
  const auto& th = w.basis_g.grid().nodes();
  const auto& cw = w.basis_g.grid().cell_weights();
  const int nph = field.phi_count();
  Eigen::MatrixXcd A;
  field.slice_amplitude(field.ground(), k, A);
  double worst = 0.0;
  for (auto [J, m, n] : {std::array<int, 3>{0, 6, 1}, {2, -6, 1}, {4, 12, 0}}) {
    const auto& P = w.basis_t.pair(J, m, n).P;
    cplx acc = 0.0;
    for (int M = -J; M <= J; M += 2) {
      int c = ThetaEigenpair::row_of_M(J, M);
      for (int i = 0; i < w.basis_g.grid().size(); ++i) {
        if (std::abs(P(c, i)) < 1e-14) continue;
        cplx gsum = 0.0;
        for (int j = 0; j < nph; ++j) {
          HyperPoint pt{w.grid.nodes()[k], th[i], field.phi_node(j)};
          gsum += std::exp(cplx(0.0, -m * pt.phi)) *
                  kernel_brute(J, M, w.kick, w.pol, pt, 48, 96) * A(i, j);
        }
        acc += cw[i] * P(c, i) * gsum / double(nph);
      }
    }
    cplx got = pk.block(J)(w.basis_t.channels().row_of(m, n), k);
    worst = std::max(worst, std::abs(got - acc));
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("negative-m amplitudes mirror across the kick sign", "[kick]") {
  const KickWorld& w = world();
  LaserKick reversed = w.kick;
  reversed.C = -w.kick.C;
  WavePacket fwd = project_to_channels(
      apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad), w.basis_t);
  WavePacket rev = project_to_channels(
      apply_delta_kick(w.states[0], w.basis_g, reversed, w.pol, w.quad), w.basis_t);

  // the mirror sign comes from the basis itself: overlap of the negative-m
  // component rows with the row-reversed positive-m rows
  const auto& cw = w.basis_g.grid().cell_weights();
  double worst = 0.0, seen = 0.0;
  for (int J = 0; J <= 4; J += 2)
    for (int m = 6; m <= 12; m += 6)
      for (int n = 0; n <= 2; ++n) {
        const auto& Pm = w.basis_t.pair(J, -m, n).P;
        const auto& Pp = w.basis_t.pair(J, m, n).P;
        double sign = 0.0;
        for (int c = 0; c <= J; ++c)
          for (int i = 0; i < w.basis_g.grid().size(); ++i)
            sign += Pm(c, i) * Pp(J - c, i) * cw[i];
        REQUIRE_THAT(std::abs(sign), WithinAbs(1.0, 1e-10));
        for (int k = 40; k < 140; k += 10) {
          cplx a = rev.block(J)(w.basis_t.channels().row_of(-m, n), k);
          cplx b = fwd.block(J)(w.basis_t.channels().row_of(m, n), k);
          seen = std::max(seen, std::abs(b));
          worst = std::max(worst, std::abs(a - sign * std::conj(b)));
        }
      }
  CHECK(worst < 1e-14);
  CHECK(seen > 1e-5);  // the comparison actually exercised populated channels
}

TEST_CASE("decomposition routes agree and converge", "[kick]") {
  const KickWorld& w = world();
  KickField field = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad);

  WavePacket pk;
  DecompositionReport rep = decompose(field, w.basis_t, w.states, &pk);

  // M -> -M symmetry of the direct populations
  for (const auto& p : rep.populations)
    for (std::size_t i = 0; i < p.P_M.size(); ++i)
      CHECK_THAT(p.P_M[i], WithinAbs(p.P_M[p.P_M.size() - 1 - i], 1e-15));

  // per-J sums and totals are consistent and nearly complete
  for (const auto& p : rep.populations) {
    double sum = 0.0;
    for (double v : p.P_M) sum += v;
    CHECK_THAT(p.direct, WithinAbs(sum, 1e-15));
  }
  CHECK(rep.direct_total > 0.999);
  CHECK(rep.direct_total < 1.0 + 1e-12);
  CHECK(rep.captured > 0.99);
  CHECK(rep.captured < 1.0 + 1e-10);
  CHECK_THAT(rep.captured, WithinAbs(pk.norm2(), 1e-12));

  // both routes of the ground overlap and the unbound remainder
  CHECK(std::abs(rep.references[0].direct_sq - rep.references[0].basis_sq) < 1e-6);
  CHECK(std::abs(rep.references[0].amp_direct - rep.references[0].amp_basis) < 1e-3);
  CHECK_THAT(rep.unbound_direct_sq,
             WithinAbs(rep.populations[0].direct - rep.references[0].direct_sq, 1e-15));
  CHECK(std::abs(rep.unbound_direct_sq - rep.unbound_basis_sq) < 1e-4);
  CHECK(rep.unbound_direct_sq > 0.0);

  // enlarging the radial basis tightens the agreement between the routes
  std::array<double, 3> sigma2{}, sigma4{}, captured{};
  for (int nmax = 0; nmax <= 2; ++nmax) {
    ChannelBasis bt = ChannelBasis::build(ChannelSet(4, 12, nmax), w.basis_g.grid());
    DecompositionReport r = decompose(field, bt, w.states);
    sigma2[nmax] = r.populations[1].sigma;
    sigma4[nmax] = r.populations[2].sigma;
    captured[nmax] = r.captured;
    // the direct route does not depend on the target truncation
    CHECK_THAT(r.populations[1].direct, WithinAbs(rep.populations[1].direct, 1e-13));
  }
  CHECK(sigma2[0] > sigma2[1]);
  CHECK(sigma2[1] > sigma2[2]);
  CHECK(sigma4[0] > sigma4[1]);
  CHECK(sigma4[1] > sigma4[2]);
  CHECK(captured[0] < captured[1]);
  CHECK(captured[1] < captured[2]);
}

TEST_CASE("the kick is a pure phase", "[kick]") {
  const KickWorld& w = world();
  KickField field = apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad);
  LaserKick off = LaserKick::from_intensity(0.0, 150.0);
  KickField idle = apply_delta_kick(w.states[0], w.basis_g, off, w.pol, w.quad);

  double phase_gap = 0.0, mod_gap = 0.0;
  for (HyperPoint pt : {HyperPoint{6.0, 0.31, 0.52}, HyperPoint{11.5, 0.70, 0.15}})
    for (double beta : {0.3, 1.2})
      for (double gamma : {0.7, 2.9}) {
        EulerAngles ang{0.0, beta, gamma};
        // the factored phase equals the per-bond sum evaluated raw
        auto g = distance_ratios(pt.theta, pt.phi);
        auto ct = lab_angles(pt, ang);
        double raw = 0.0;
        for (int c = 0; c < 3; ++c) raw += laser_dimer(w.pol, pt.rho * g[c], ct[c]);
        phase_gap = std::max(phase_gap, std::abs(field.phase(pt, ang) - w.kick.C * raw));
        // and the kicked wavefunction keeps the modulus of the resting one
        mod_gap = std::max(mod_gap,
                           std::abs(std::abs(field.value(pt, ang)) -
                                    std::abs(idle.value(pt, ang))));
      }
  CHECK(phase_gap < 1e-12);
  CHECK(mod_gap < 1e-14);

  // the phase dies off with the cluster size
  EulerAngles ang{0.0, 0.9, 0.4};
  CHECK(std::abs(field.phase({1000.0, 0.3, 0.5}, ang)) <
        1e-6 * std::abs(field.phase({6.0, 0.3, 0.5}, ang)));
}

TEST_CASE("quadrature refinements agree", "[kick]") {
  const KickWorld& w = world();
  WavePacket base = project_to_channels(
      apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, w.quad), w.basis_t);

  // a three times denser phi sector moves nothing at this kick strength
  KickQuadrature dense = w.quad;
  dense.phi_sector = 120;
  WavePacket fine = project_to_channels(
      apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, dense), w.basis_t);

  // kernels read from the lattice tables agree with direct beta quadrature
  KickQuadrature exact = w.quad;
  exact.table_spacing = 0.0;
  WavePacket direct = project_to_channels(
      apply_delta_kick(w.states[0], w.basis_g, w.kick, w.pol, exact), w.basis_t);

  double dphi = 0.0, dtab = 0.0;
  for (int J = 0; J <= 4; J += 2) {
    dphi = std::max(dphi, (fine.block(J) - base.block(J)).cwiseAbs().maxCoeff());
    dtab = std::max(dtab, (direct.block(J) - base.block(J)).cwiseAbs().maxCoeff());
  }
  CHECK(dphi < 1e-5);
  CHECK(dtab < 1e-8);
}

TEST_CASE("intensity scan fits the survival curve", "[kick]") {
  const KickWorld& w = world();
  std::vector<double> is = {0.0, 1.0e14, 2.0e14, 3.0e14, 4.0e14};
  IntensityScan sc = intensity_scan(is, 150.0, w.states[0], w.basis_g, w.pol, w.quad);

  REQUIRE(sc.survival.size() == is.size());
  CHECK_THAT(sc.survival[0], WithinAbs(1.0, 1e-12));  // no pulse, no transfer
  for (std::size_t i = 1; i < sc.survival.size(); ++i) {
    CHECK(sc.survival[i] < sc.survival[i - 1]);
    CHECK(sc.survival[i] > 0.0);
  }

  // the quadratic fit describes the curve: intercept near one, small
  // residual against the size of the curvature term it resolves
  CHECK_THAT(sc.q0, WithinAbs(1.0, 5e-3));
  CHECK(sc.q1 < 0.0);
  CHECK(sc.q2 < 0.0);
  double u_max = 4.0;
  CHECK(sc.fit_rms < 1e-3);
  CHECK(sc.fit_rms < 0.05 * std::abs(sc.q2) * u_max * u_max);
}
