#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <filesystem>
#include <memory>
#include <vector>

#include "hyperkick/stationary.hpp"

using namespace hyperkick;
using Catch::Matchers::WithinAbs;

namespace {

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    static int counter = 0;
    path = std::filesystem::temp_directory_path() /
           ("hk_test_stationary_" + std::to_string(counter++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

// Numerov shooting integrator: counts radial nodes of u(r) for trial energy
// E, so the lowest eigenvalue is bracketed by where the first node appears.
int numerov_nodes(double E, double mu, const PairPotential& pot, double L, int n) {
  double h = L / n;
  auto f = [&](double r) { return 2.0 * mu * (pot(r) - E); };
  double um = 0.0, u0 = h;
  int nodes = 0;
  double fm = f(1e-300), f0 = f(h);
  for (int i = 1; i < n; ++i) {
    double fp = f((i + 1) * h);
    double up = (2.0 * u0 * (1.0 + 5.0 * h * h * f0 / 12.0) - um * (1.0 - h * h * fm / 12.0)) /
                (1.0 - h * h * fp / 12.0);
    if ((up < 0.0 && u0 > 0.0) || (up > 0.0 && u0 < 0.0)) ++nodes;
    um = u0;
    u0 = up;
    fm = f0;
    f0 = fp;
    if (std::abs(u0) > 1e280) {
      um *= 1e-280;
      u0 *= 1e-280;
    }
  }
  return nodes;
}

double numerov_ground(double mu, const PairPotential& pot, double L, int n, double vmin) {
  double lo = vmin, hi = 0.0;
  for (int it = 0; it < 200; ++it) {
    double mid = 0.5 * (lo + hi);
    (numerov_nodes(mid, mu, pot, L, n) >= 1 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

// dense matrix of the J = 0 block through the same operator application the
// relaxation uses
Eigen::MatrixXd dense_J0(const CoupledHamiltonian& h) {
  int rows = h.channels().rows_per_J();
  int n = h.grid().size();
  Eigen::MatrixXd H(rows * n, rows * n);
  Eigen::MatrixXd e = Eigen::MatrixXd::Zero(rows, n), out;
  for (int r = 0; r < rows; ++r)
    for (int k = 0; k < n; ++k) {
      e(r, k) = 1.0;
      h.apply_weighted(0, e, out);
      for (int r2 = 0; r2 < rows; ++r2)
        for (int k2 = 0; k2 < n; ++k2) H(r2 * n + k2, r * n + k) = out(r2, k2);
      e(r, k) = 0.0;
    }
  return H;
}

}  // namespace

TEST_CASE("solver inputs are validated", "[stationary]") {
  RadialGrid g = RadialGrid::uniform(64, 0.0, 20.0);
  PairPotential pot{Curve1D::gauss(0.02, 6.0)};
  REQUIRE_THROWS_AS(solve_dimer_ground(pot, g, 0.0), ConstraintViolation);
  REQUIRE_THROWS_AS(solve_dimer_ground(pot, g, -2.0), ConstraintViolation);

  ChannelSet cs(0, 0, 0);
  ChannelBasis basis = ChannelBasis::build(cs, 80);
  RadialGrid tg = RadialGrid::exponential(96, 1.0, 18.0, 2.0);
  auto table = std::make_shared<CouplingTable>(CouplingTable::build(basis, tg, pot, 48));
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, table, tg, 5.0, 0), ConstraintViolation);
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, table, tg, 5.0, 3), ConstraintViolation);
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, nullptr, tg, 5.0, 1), ConstraintViolation);
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, table, tg, 0.0, 1), ConstraintViolation);

  TrimerSolveConfig bad;
  bad.overlap_tol = 0.0;
  REQUIRE_THROWS_AS(bad.validate(), ConstraintViolation);
  bad = TrimerSolveConfig{};
  bad.noise_scale = -1.0;
  REQUIRE_THROWS_AS(bad.validate(), ConstraintViolation);

  REQUIRE_THROWS_AS(pair_distribution(StationaryState{}, basis, 1, 240), ConstraintViolation);
  REQUIRE_THROWS_AS(pair_distribution(StationaryState{}, basis, 100, 4), ConstraintViolation);
}

TEST_CASE("dimer ground state matches a shooting-method oracle", "[stationary]") {
  double mass = 100.0;  // mu = 50
  PairPotential pot{Curve1D::gauss(0.02, 6.0)};
  double L = 40.0;

  // Richardson-extrapolated Numerov reference for the continuum eigenvalue
  double e1 = numerov_ground(0.5 * mass, pot, L, 40000, -0.02);
  double e2 = numerov_ground(0.5 * mass, pot, L, 80000, -0.02);
  double eR = (16.0 * e2 - e1) / 15.0;

  auto solve_err = [&](const RadialGrid& g) {
    StationaryState s = solve_dimer_ground(pot, g, mass);
    REQUIRE(s.energy < 0.0);
    REQUIRE(s.J == 0);
    REQUIRE_THAT(s.state.norm2(), WithinAbs(1.0, 1e-12));
    return std::abs(s.energy - eR) / std::abs(eR);
  };
  double r1000 = solve_err(RadialGrid::uniform(1000, 0.0, L));
  double r2000 = solve_err(RadialGrid::uniform(2000, 0.0, L));
  double r4000 = solve_err(RadialGrid::uniform(4000, 0.0, L));
  REQUIRE(r4000 < 1e-9);  // measured 7.0e-12
  REQUIRE(r1000 / r2000 > 6.0);
  REQUIRE(r2000 / r4000 > 6.0);  // ~ fourth-order stencil convergence
  REQUIRE(solve_err(RadialGrid::exponential(2000, 0.0, L, 2.0)) < 1e-9);  // measured 6.5e-12

  StationaryState s = solve_dimer_ground(pot, RadialGrid::uniform(4000, 0.0, L), mass);
  Eigen::VectorXd u = dimer_radial(s);
  double edge = std::abs(s.state.block(0)(0, 3999)) / s.state.block(0).cwiseAbs().maxCoeff();
  REQUIRE(edge < 1e-8);  // measured 6.0e-27

  // the pair distribution of a dimer state is its reduced radial density
  PairDistribution pd = pair_distribution(s);
  REQUIRE_THAT(pd.norm(), WithinAbs(1.0, 1e-12));
  REQUIRE((pd.density - u.array().square().matrix()).cwiseAbs().maxCoeff() < 1e-15);
  REQUIRE(pd.mean > 0.0);
  REQUIRE(pd.second_moment > pd.mean * pd.mean);  // positive variance

  // essentially massless partners cannot be held by this well
  REQUIRE_THROWS_AS(solve_dimer_ground(pot, RadialGrid::uniform(200, 0.0, L), 1e-3),
                    NoBoundState);
}

TEST_CASE("trimer bound states match a dense eigensolve of the same operator", "[stationary]") {
  ChannelSet cs(0, 6, 1);
  ChannelBasis basis = ChannelBasis::build(cs, 120);
  RadialGrid grid = RadialGrid::exponential(180, 1.5, 60.0, 3.0);
  double mass = 30.0;
  PairPotential pot{Curve1D::gauss(0.05, 4.0)};
  auto table = std::make_shared<CouplingTable>(CouplingTable::build(basis, grid, pot, 64));

  CoupledHamiltonian h =
      CoupledHamiltonian::from_basis(basis, grid, units::hyper_mass(mass), table);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense_J0(h));
  double l0 = es.eigenvalues()[0], l1 = es.eigenvalues()[1];
  REQUIRE(l0 < 0.0);
  REQUIRE(l1 < 0.0);

  std::vector<StationaryState> st = solve_trimer_bound(basis, table, grid, mass, 2);
  REQUIRE(st.size() == 2);
  REQUIRE(std::abs(st[0].energy - l0) < 1e-8 * std::abs(l0));  // measured 1.1e-10
  REQUIRE(std::abs(st[1].energy - l1) < 1e-8 * std::abs(l1));  // measured 3.3e-10
  REQUIRE(st[0].energy < st[1].energy);
  REQUIRE(st[0].J == 0);
  REQUIRE(st[1].J == 0);
  REQUIRE(std::abs(st[0].state.inner(st[1].state)) < 1e-10);  // measured 9.7e-17
  REQUIRE_THAT(h.mean_energy(st[0].state), WithinAbs(st[0].energy, 1e-10));
  REQUIRE_THAT(st[0].state.norm2(), WithinAbs(1.0, 1e-12));

  // energy parts through independent code paths add up to the total
  auto [T, V] = energy_split(st[0], basis, *table, mass);
  REQUIRE(T > 0.0);
  REQUIRE(V < 0.0);
  REQUIRE(std::abs(T + V - st[0].energy) < 1e-10 * std::abs(st[0].energy));  // measured 3.7e-16
  auto [Tx, Vx] = energy_split(st[1], basis, *table, mass);
  REQUIRE(std::abs(Tx + Vx - st[1].energy) < 1e-10 * std::abs(st[1].energy));

  // a multi-channel state has no single radial profile
  REQUIRE_THROWS_AS(dimer_radial(st[0]), ConstraintViolation);

  // bosonic sector: flat phi derivative at the sector boundaries
  REQUIRE(phi_boundary_defect(st[0], basis) < 1e-12);  // measured 2.5e-16
  REQUIRE(phi_boundary_defect(st[1], basis) < 1e-12);

  // contained in the box
  int n = grid.size();
  double peak0 = st[0].state.block(0).cwiseAbs().maxCoeff();
  REQUIRE(st[0].state.block(0).col(n - 1).cwiseAbs().maxCoeff() < 1e-8 * peak0);
  double peak1 = st[1].state.block(0).cwiseAbs().maxCoeff();
  REQUIRE(st[1].state.block(0).col(n - 1).cwiseAbs().maxCoeff() < 1e-8 * peak1);

  // ground state nodeless along its dominant channel
  int dom = 0;
  double best = 0.0;
  for (int r = 0; r < cs.rows_per_J(); ++r) {
    double m = st[0].state.block(0).row(r).cwiseAbs().maxCoeff();
    if (m > best) {
      best = m;
      dom = r;
    }
  }
  int flips = 0, prev = 0;
  for (int k = 0; k < n; ++k) {
    std::complex<double> f = st[0].state.block(0)(dom, k);
    if (std::abs(f) < 1e-6 * best) continue;
    int sgn = std::real(f) > 0.0 ? 1 : -1;
    if (prev != 0 && sgn != prev) ++flips;
    prev = sgn;
  }
  REQUIRE(flips == 0);

  // pair distribution: unit norm, exact second moment <rho^2>/sqrt(3),
  // histogram moments consistent with the unbinned quadrature moments
  PairDistribution pd = pair_distribution(st[0], basis, 400, 240);
  REQUIRE_THAT(pd.norm(), WithinAbs(1.0, 1e-12));
  double rho2 = 0.0;
  for (int k = 0; k < n; ++k) {
    double rho = grid.nodes()[k];
    rho2 += rho * rho * st[0].state.measure()[k] * st[0].state.block(0).col(k).squaredNorm();
  }
  REQUIRE(std::abs(pd.second_moment - rho2 / std::sqrt(3.0)) < 1e-12 * pd.second_moment);
  double hist_mean = (pd.r.array() * pd.density.array() * pd.weight.array()).sum();
  REQUIRE(std::abs(hist_mean - pd.mean) < 5e-4 * pd.mean);  // measured 4.6e-5
  PairDistribution pd2 = pair_distribution(st[0], basis, 400, 480);
  REQUIRE(std::abs(pd2.mean - pd.mean) < 1e-6 * pd.mean);  // measured 9.3e-9
  ChannelBasis other = ChannelBasis::build(ChannelSet(0, 0, 0), 80);
  REQUIRE_THROWS_AS(pair_distribution(st[0], other, 400, 240), GridMismatch);

  // snapshot roundtrip keeps energy and amplitudes bitwise
  TempDir dir;
  std::string path = (dir.path / "ground.hkb").string();
  save_state(st[0], path);
  StationaryState back = load_state(path);
  REQUIRE(back.energy == st[0].energy);
  REQUIRE(back.J == 0);
  REQUIRE(back.state.grid().same_as(grid));
  REQUIRE((back.state.block(0).cwiseEqual(st[0].state.block(0))).all());
  std::string wp_path = (dir.path / "plain.hkb").string();
  st[0].state.save(wp_path);
  REQUIRE_THROWS_AS(load_state(wp_path), CheckpointIOFailure);

  // guard rails on the relaxation
  TrimerSolveConfig tight;
  tight.overlap_tol = 1e-18;
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, table, grid, mass, 2, tight), DeflationFailure);
  TrimerSolveConfig clipped;
  clipped.relax.max_steps = 3;
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, table, grid, mass, 1, clipped), NoConvergence);
}

TEST_CASE("trimer solver reports unbound systems", "[stationary]") {
  ChannelSet cs(0, 0, 0);
  ChannelBasis basis = ChannelBasis::build(cs, 80);
  RadialGrid grid = RadialGrid::exponential(96, 1.0, 18.0, 2.0);
  double mass = 5.0;

  PairPotential weak{Curve1D::gauss(0.002, 3.0)};
  auto wt = std::make_shared<CouplingTable>(CouplingTable::build(basis, grid, weak, 48));
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, wt, grid, mass, 1), NoBoundState);

  // binds once, so asking for the second level must fail
  PairPotential once{Curve1D::gauss(0.06, 3.0)};
  auto ot = std::make_shared<CouplingTable>(CouplingTable::build(basis, grid, once, 48));
  std::vector<StationaryState> st = solve_trimer_bound(basis, ot, grid, mass, 1);
  REQUIRE(st[0].energy < 0.0);
  REQUIRE_THROWS_AS(solve_trimer_bound(basis, ot, grid, mass, 2), NoBoundState);
}

TEST_CASE("pair separation covers the geometric range", "[stationary]") {
  const double pi = 3.141592653589793238462643383279502884;
  // theta = pi/4 is the equilateral ridge: separation rho / 3^{1/4} for all phi
  for (double phi : {0.0, 0.3, 1.2}) {
    REQUIRE_THAT(pair_separation(10.0, 0.25 * pi, phi),
                 WithinAbs(10.0 * std::pow(3.0, -0.25), 1e-12));
  }
  // collinear extremes at theta -> 0
  REQUIRE_THAT(pair_separation(10.0, 0.0, 0.0),
               WithinAbs(10.0 * std::pow(3.0, -0.25) * std::sqrt(2.0), 1e-12));
  REQUIRE_THAT(pair_separation(10.0, 0.0, 0.5 * pi), WithinAbs(0.0, 1e-12));
  // scales linearly with rho
  REQUIRE_THAT(pair_separation(7.0, 0.3, 0.4) / pair_separation(1.0, 0.3, 0.4),
               WithinAbs(7.0, 1e-12));
}
