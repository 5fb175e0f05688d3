#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hyperkick/chanbasis.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/evolve.hpp"
#include "hyperkick/interaction.hpp"
#include "hyperkick/parallel.hpp"
#include "hyperkick/radialgrid.hpp"
#include "hyperkick/units.hpp"
#include "hyperkick/wavepacket.hpp"

// Bound states. The pair (dimer) ground state comes from spectrum slicing of
// the banded radial operator: Sturm counts from an LDL^T factorization
// bisect the lowest eigenvalue to machine precision, then inverse iteration
// recovers the vector. Three-body J = 0 bound states reuse the imaginary-time
// engine with Gram-Schmidt deflation. Pair-distance distributions are binned
// from the hyperangular quadrature.

namespace hyperkick {

namespace detail {

// Symmetric pentadiagonal LDL^T without pivoting, for Sturm counts and
// shifted solves. Diagonals follow RadialGrid: a1[i] couples (i, i+1) and
// a2[i] couples (i, i+2). Tiny pivots are pushed to -pivmin, the standard
// bisection-safe convention.
struct BandedLDL {
  Eigen::VectorXd d, l1, l2;
  int negatives = 0;

  void factor(const Eigen::VectorXd& a0, const Eigen::VectorXd& a1, const Eigen::VectorXd& a2,
              double sigma, double pivmin) {
    int n = static_cast<int>(a0.size());
    d.resize(n);
    l1.setZero(n);
    l2.setZero(n);
    negatives = 0;
    for (int i = 0; i < n; ++i) {
      double li1 = 0.0, li2 = 0.0;  // L(i, i-1) and L(i, i-2)
      if (i >= 2) {
        li2 = a2[i - 2] / d[i - 2];
        li1 = (a1[i - 1] - li2 * d[i - 2] * l1[i - 1]) / d[i - 1];
      } else if (i == 1) {
        li1 = a1[0] / d[0];
      }
      double di = a0[i] - sigma;
      if (i >= 1) di -= li1 * li1 * d[i - 1];
      if (i >= 2) di -= li2 * li2 * d[i - 2];
      if (std::abs(di) < pivmin) di = -pivmin;
      if (di < 0.0) ++negatives;
      d[i] = di;
      l1[i] = li1;
      l2[i] = li2;
    }
  }

  // solve (A - sigma) x = b in place using the stored factorization
  void solve(Eigen::VectorXd& x) const {
    int n = static_cast<int>(d.size());
    for (int i = 1; i < n; ++i) {
      x[i] -= l1[i] * x[i - 1];
      if (i >= 2) x[i] -= l2[i] * x[i - 2];
    }
    for (int i = 0; i < n; ++i) x[i] /= d[i];
    for (int i = n - 2; i >= 0; --i) {
      x[i] -= l1[i + 1] * x[i + 1];
      if (i + 2 < n) x[i] -= l2[i + 2] * x[i + 2];
    }
  }
};

inline std::string format_meta(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

// Lowest s-wave level of two identical atoms of mass `atom_mass` interacting
// through `vaa`, on the reduced radial equation
//   [-(1/(2 mu)) d^2/dr^2 + V(r)] u = E u,  mu = atom_mass / 2,
// with hard walls at the grid ends. The returned packet stores F = u/r^{5/2}
// on a single channel so the standard rho^5 measure reduces to sum w u^2;
// use dimer_radial() to read u back.
inline StationaryState solve_dimer_ground(const PairPotential& vaa, const RadialGrid& grid,
                                          double atom_mass) {
  if (!(atom_mass > 0.0))
    throw ConstraintViolation("solve_dimer_ground: atom mass must be positive");
  int n = grid.size();
  double kin = 1.0 / atom_mass;  // 1/(2 mu) with mu = m/2
  Eigen::VectorXd a0(n), a1 = kin * grid.lap1(), a2 = kin * grid.lap2();
  for (int i = 0; i < n; ++i) a0[i] = kin * grid.lap0()[i] + vaa(grid.nodes()[i]);

  double span = 0.0;
  for (int i = 0; i < n; ++i) {
    double radius = 0.0;
    if (i + 1 < n) radius += std::abs(a1[i]);
    if (i + 2 < n) radius += std::abs(a2[i]);
    if (i >= 1) radius += std::abs(a1[i - 1]);
    if (i >= 2) radius += std::abs(a2[i - 2]);
    span = std::max(span, std::abs(a0[i]) + radius);
  }
  double pivmin = 1e-290 + 1e-30 * span;

  detail::BandedLDL ldl;
  ldl.factor(a0, a1, a2, 0.0, pivmin);
  if (ldl.negatives == 0)
    throw NoBoundState("solve_dimer_ground: the pair potential holds no state below zero energy");

  // bisect the lowest eigenvalue between the Gershgorin floor and 0
  double lo = -span, hi = 0.0;
  for (int it = 0; it < 240 && hi - lo > 1e-16 * span; ++it) {
    double mid = 0.5 * (lo + hi);
    ldl.factor(a0, a1, a2, mid, pivmin);
    (ldl.negatives >= 1 ? hi : lo) = mid;
  }

  // inverse iteration just below the bracketed eigenvalue; the shifted
  // matrix is positive definite there, so the factorization is stable
  double shift = lo - 1e4 * std::max(hi - lo, 1e-18 * span);
  ldl.factor(a0, a1, a2, shift, pivmin);
  Eigen::VectorXd v = Eigen::VectorXd::Ones(n) / std::sqrt(double(n));
  for (int it = 0; it < 8; ++it) {
    ldl.solve(v);
    v /= v.norm();
  }
  // Rayleigh quotient of the converged vector
  Eigen::VectorXd av(n);
  for (int i = 0; i < n; ++i) {
    double acc = a0[i] * v[i];
    if (i >= 1) acc += a1[i - 1] * v[i - 1];
    if (i + 1 < n) acc += a1[i] * v[i + 1];
    if (i >= 2) acc += a2[i - 2] * v[i - 2];
    if (i + 2 < n) acc += a2[i] * v[i + 2];
    av[i] = acc;
  }
  double E = v.dot(av);
  if (!(E < 0.0))
    throw NoBoundState("solve_dimer_ground: lowest level is not below zero energy");

  int imax = 0;
  for (int i = 0; i < n; ++i)
    if (std::abs(v[i]) > std::abs(v[imax])) imax = i;
  if (v[imax] < 0.0) v = -v;

  StationaryState out;
  out.energy = E;
  out.J = 0;
  out.state = WavePacket(ChannelSet(0, 0, 0), grid);
  for (int i = 0; i < n; ++i) {
    double u = v[i] / std::sqrt(grid.weights()[i]);
    out.state.block(0)(0, i) = u * std::pow(grid.nodes()[i], -2.5);
  }
  return out;
}

// reduced radial function u(r) of a dimer state, normalized sum w u^2 = 1
inline Eigen::VectorXd dimer_radial(const StationaryState& s) {
  if (s.state.channels().total_rows() != 1)
    throw ConstraintViolation("dimer_radial: state is not a single-channel dimer solution");
  const RadialGrid& g = s.state.grid();
  Eigen::VectorXd u(g.size());
  for (int i = 0; i < g.size(); ++i)
    u[i] = std::real(s.state.block(0)(0, i)) * std::pow(g.nodes()[i], 2.5);
  return u;
}

struct TrimerSolveConfig {
  ImagTimeConfig relax{};      // imaginary-time controls
  double overlap_tol = 1e-8;   // ground/excited overlap guard after deflation
  double noise_scale = 1e-3;   // broadband admixture seeding all channels

  void validate() const {
    relax.validate();
    if (!(overlap_tol > 0.0))
      throw ConstraintViolation("TrimerSolveConfig: overlap_tol must be positive");
    if (noise_scale < 0.0)
      throw ConstraintViolation("TrimerSolveConfig: noise_scale must be nonnegative");
  }
};

namespace detail {

// average the +m / -m amplitudes: the physical (bosonic) sector is even
// across the phi reflection, and the coupled operator preserves it
inline void reflect_symmetrize(WavePacket& wp) {
  const ChannelSet& cs = wp.channels();
  for (int J : cs.J_values()) {
    Eigen::MatrixXcd& b = wp.block(J);
    for (int r = 0; r < cs.rows_per_J(); ++r) {
      int m = cs.m_of_row(r);
      if (m <= 0) continue;
      int rm = cs.row_of(-m, cs.n_of_row(r));
      Eigen::RowVectorXcd avg = 0.5 * (b.row(r) + b.row(rm));
      b.row(r) = avg;
      b.row(rm) = avg;
    }
  }
}

inline WavePacket trimer_guess(const CoupledHamiltonian& h, const CouplingTable& table,
                               bool excited, double noise_scale, std::uint64_t seed) {
  const ChannelSet& cs = h.channels();
  const RadialGrid& g = h.grid();
  int n = g.size();

  // center the profile where the effective diagonal potential is deepest
  double best = std::numeric_limits<double>::infinity();
  int bk = n / 2, br = 0;
  for (int k = 0; k < n; ++k) {
    double rho = g.nodes()[k];
    for (int r = 0; r < cs.rows_per_J(); ++r) {
      double veff = table.block(0, k)(r, r) +
                    h.kinetic_scale() * (3.75 + h.lambda_rows(0)[r]) / (rho * rho);
      if (veff < best) {
        best = veff;
        bk = k;
        br = r;
      }
    }
  }
  double rho_star = g.nodes()[bk];
  double width = 0.12 * (g.r_max() - g.r_min());

  WavePacket wp(cs, g);
  int m_star = cs.m_of_row(br), n_star = cs.n_of_row(br);
  int r_plus = cs.row_of(std::abs(m_star), n_star);
  int r_minus = cs.row_of(-std::abs(m_star), n_star);
  for (int k = 0; k < n; ++k) {
    double x = (g.nodes()[k] - rho_star) / width;
    double profile = std::exp(-x * x);
    if (excited) profile = x * std::exp(-0.25 * x * x);  // one radial lobe change
    wp.block(0)(r_plus, k) = profile;
    wp.block(0)(r_minus, k) = profile;
  }
  // small reflection-symmetric admixture so every channel overlaps the guess
  for (int r = 0; r < cs.rows_per_J(); ++r) {
    int m = cs.m_of_row(r);
    if (m < 0) continue;
    int rm = cs.row_of(-m, cs.n_of_row(r));
    for (int k = 0; k < n; ++k) {
      double x = (g.nodes()[k] - rho_star) / width;
      double bump = noise_scale * uniform_pm1(seed) * std::exp(-0.5 * x * x);
      wp.block(0)(r, k) += bump;
      if (rm != r) wp.block(0)(rm, k) += bump;
    }
  }
  wp.normalize();
  return wp;
}

}  // namespace detail

// Lowest one or two J = 0 bound states of the coupled trimer problem by
// imaginary-time relaxation (deflating the ground state for the excited
// one). States are projected onto the reflection-even sector and must come
// out strictly below zero energy.
inline std::vector<StationaryState> solve_trimer_bound(
    const ChannelBasis& basis, std::shared_ptr<const CouplingTable> table,
    const RadialGrid& grid, double atom_mass, int count, TrimerSolveConfig cfg = {}) {
  if (count != 1 && count != 2)
    throw ConstraintViolation("solve_trimer_bound: count must be 1 or 2");
  if (!table) throw ConstraintViolation("solve_trimer_bound: coupling table required");
  if (!(atom_mass > 0.0))
    throw ConstraintViolation("solve_trimer_bound: atom mass must be positive");
  cfg.validate();

  CoupledHamiltonian h =
      CoupledHamiltonian::from_basis(basis, grid, units::hyper_mass(atom_mass), table);

  auto settle = [&](const WavePacket& guess,
                    const std::vector<StationaryState>& deflate) -> StationaryState {
    StationaryState s = propagate_imaginary(h, guess, deflate, cfg.relax);
    detail::reflect_symmetrize(s.state);
    double kept = s.state.norm2();
    if (kept < 0.5)
      throw NoConvergence(
          "solve_trimer_bound: relaxed state is not reflection even; the guess "
          "collapsed into an unphysical sector");
    s.state.normalize();
    s.energy = h.mean_energy(s.state);
    return s;
  };

  std::vector<StationaryState> out;
  WavePacket g0 = detail::trimer_guess(h, *table, false, cfg.noise_scale, 0x5b7a0f3161c1d24bULL);
  out.push_back(settle(g0, {}));
  if (!(out[0].energy < 0.0))
    throw NoBoundState("solve_trimer_bound: lowest J=0 level is not below zero energy");

  if (count == 2) {
    WavePacket g1 = detail::trimer_guess(h, *table, true, cfg.noise_scale, 0x9d2c5680e4f1a773ULL);
    StationaryState ex = settle(g1, {out[0]});
    double ov = std::abs(out[0].state.inner(ex.state));
    if (ov > cfg.overlap_tol)
      throw DeflationFailure("solve_trimer_bound: excited state retains overlap " +
                             std::to_string(ov) + " with the ground state");
    if (!(ex.energy < 0.0))
      throw NoBoundState(
          "solve_trimer_bound: no second J=0 level below zero energy on this grid");
    out.push_back(std::move(ex));
  }
  return out;
}

// <T> and <V> evaluated through independent paths: kinetic plus channel
// barriers via a coupling-free Hamiltonian, the potential directly from the
// coupling table. Their sum reproduces the total energy.
inline std::pair<double, double> energy_split(const StationaryState& s, const ChannelBasis& basis,
                                              const CouplingTable& table, double atom_mass) {
  CoupledHamiltonian kin = CoupledHamiltonian::from_basis(
      basis, s.state.grid(), units::hyper_mass(atom_mass), nullptr);
  double T = kin.mean_energy(s.state);
  if (!table.grid().same_as(s.state.grid()))
    throw GridMismatch("energy_split: coupling table grid differs from the state grid");
  double V = 0.0;
  const Eigen::VectorXd& meas = s.state.measure();
  for (int J : s.state.channels().J_values()) {
    const Eigen::MatrixXcd& b = s.state.block(J);
    for (int k = 0; k < s.state.grid().size(); ++k) {
      Eigen::VectorXcd col = b.col(k);
      V += meas[k] * std::real(col.dot(table.block(J, k) * col));
    }
  }
  return {T, V};
}

// ---------------------------------------------------------------------------
// Pair-distance distributions
//
// With the channel functions' phi factor e^{i m phi} and the Euler angles
// integrated out by Wigner orthogonality, the probability weight of a
// quadrature node (rho_k, theta_i, phi_j) on the full phi circle is
//   w_k rho_k^5 cellw_i (1/N_phi) sum_{J,M} |sum_{m,n} F^J_{mn}(rho_k)
//                                            P^{Jm}_{Mn}(theta_i) e^{i m phi_j}|^2
// and the separation of one pair is r = rho 3^{-1/4} sqrt(1 + cos 2theta
// cos 2phi); the three pairs are phi translates of each other, so any single
// pair carries the full distribution.

inline double pair_separation(double rho, double theta, double phi) {
  return rho * std::pow(3.0, -0.25) *
         std::sqrt(std::max(0.0, 1.0 + std::cos(2.0 * theta) * std::cos(2.0 * phi)));
}

struct PairDistribution {
  Eigen::VectorXd r;        // abscissas (grid nodes or bin centers)
  Eigen::VectorXd density;  // P(r), so that sum density * weight = 1
  Eigen::VectorXd weight;   // per-abscissa integration weight
  double mean = 0.0;         // quadrature moments, accumulated before binning
  double second_moment = 0.0;

  double norm() const { return density.dot(weight); }
};

// dimer states carry the distribution directly: P(r) = u(r)^2
inline PairDistribution pair_distribution(const StationaryState& s) {
  Eigen::VectorXd u = dimer_radial(s);
  const RadialGrid& g = s.state.grid();
  PairDistribution out;
  out.r = Eigen::Map<const Eigen::VectorXd>(g.nodes().data(), g.size());
  out.weight = Eigen::Map<const Eigen::VectorXd>(g.weights().data(), g.size());
  out.density = u.array().square();
  out.mean = (out.r.array() * out.density.array() * out.weight.array()).sum();
  out.second_moment =
      (out.r.array().square() * out.density.array() * out.weight.array()).sum();
  return out;
}

// trimer states are binned over the hyperangular quadrature
inline PairDistribution pair_distribution(const StationaryState& s, const ChannelBasis& basis,
                                          int bins = 400, int phi_points = 240) {
  if (bins < 2) throw ConstraintViolation("pair_distribution: need at least 2 bins");
  if (phi_points < 8) throw ConstraintViolation("pair_distribution: need at least 8 phi points");
  if (!(basis.channels() == s.state.channels()))
    throw GridMismatch("pair_distribution: basis channels differ from the state");

  const ChannelSet& cs = s.state.channels();
  const ThetaGrid& tg = basis.grid();
  const RadialGrid& rg = s.state.grid();
  int n = rg.size(), nth = tg.size(), nm = cs.m_count(), nn = cs.n_count();
  const double pi = 3.141592653589793238462643383279502884;

  double r_hi = rg.r_max() * std::pow(3.0, -0.25) * std::sqrt(2.0) * (1.0 + 1e-12);
  double dr = r_hi / bins;

  std::vector<std::complex<double>> phase(static_cast<std::size_t>(nm) * phi_points);
  std::vector<double> c2phi(phi_points);
  for (int j = 0; j < phi_points; ++j) {
    double phi = (j + 0.5) * 2.0 * pi / phi_points;
    c2phi[j] = std::cos(2.0 * phi);
    for (int mi = 0; mi < nm; ++mi) {
      int m = -cs.m_max() + 6 * mi;
      phase[static_cast<std::size_t>(mi) * phi_points + j] =
          std::exp(std::complex<double>(0.0, m * phi));
    }
  }

  Eigen::MatrixXd hist = Eigen::MatrixXd::Zero(n, bins);
  Eigen::VectorXd m1 = Eigen::VectorXd::Zero(n), m2 = Eigen::VectorXd::Zero(n);
  const Eigen::VectorXd& meas = s.state.measure();
  const auto& cw = tg.cell_weights();

  parallel_for(n, [&](long k) {
    double rho = rg.nodes()[k];
    double c3 = rho * std::pow(3.0, -0.25);
    Eigen::MatrixXcd amp(nm, nth);  // sum over n of F * P, per (m, theta)
    for (int J : cs.J_values()) {
      const Eigen::MatrixXcd& b = s.state.block(J);
      for (int M = -J; M <= J; M += 2) {
        int c = ThetaEigenpair::row_of_M(J, M);
        for (int mi = 0; mi < nm; ++mi) {
          int m = -cs.m_max() + 6 * mi;
          for (int i = 0; i < nth; ++i) {
            std::complex<double> acc = 0.0;
            for (int ni = 0; ni < nn; ++ni)
              acc += b(cs.row_of(m, ni), k) * basis.pair(J, m, ni).P(c, i);
            amp(mi, i) = acc;
          }
        }
        for (int i = 0; i < nth; ++i) {
          double c2t = std::cos(2.0 * tg.nodes()[i]);
          double wbase = meas[k] * cw[i] / phi_points;
          for (int j = 0; j < phi_points; ++j) {
            std::complex<double> a = 0.0;
            for (int mi = 0; mi < nm; ++mi)
              a += amp(mi, i) * phase[static_cast<std::size_t>(mi) * phi_points + j];
            double w = wbase * std::norm(a);
            double r = c3 * std::sqrt(std::max(0.0, 1.0 + c2t * c2phi[j]));
            int bin = std::min(static_cast<int>(r / dr), bins - 1);
            hist(k, bin) += w;
            m1[k] += w * r;
            m2[k] += w * r * r;
          }
        }
      }
    }
  });

  PairDistribution out;
  out.r.resize(bins);
  for (int b = 0; b < bins; ++b) out.r[b] = (b + 0.5) * dr;
  out.weight = Eigen::VectorXd::Constant(bins, dr);
  out.density = hist.colwise().sum().transpose() / dr;
  out.mean = m1.sum();
  out.second_moment = m2.sum();
  return out;
}

// max |d psi / d phi| over the sector boundaries phi = 0 and pi/3, relative
// to the largest phi derivative anywhere; zero for a clean bosonic state
inline double phi_boundary_defect(const StationaryState& s, const ChannelBasis& basis,
                                  int phi_points = 96) {
  const ChannelSet& cs = s.state.channels();
  if (!(basis.channels() == cs))
    throw GridMismatch("phi_boundary_defect: basis channels differ from the state");
  const ThetaGrid& tg = basis.grid();
  const RadialGrid& rg = s.state.grid();
  const double pi = 3.141592653589793238462643383279502884;
  int nm = cs.m_count(), nn = cs.n_count();

  double edge = 0.0, anywhere = 0.0;
  for (int J : cs.J_values()) {
    const Eigen::MatrixXcd& b = s.state.block(J);
    for (int M = -J; M <= J; M += 2) {
      int c = ThetaEigenpair::row_of_M(J, M);
      for (int k = 0; k < rg.size(); ++k)
        for (int i = 0; i < tg.size(); ++i) {
          Eigen::VectorXcd t(nm);
          for (int mi = 0; mi < nm; ++mi) {
            int m = -cs.m_max() + 6 * mi;
            std::complex<double> acc = 0.0;
            for (int ni = 0; ni < nn; ++ni)
              acc += b(cs.row_of(m, ni), k) * basis.pair(J, m, ni).P(c, i);
            t[mi] = acc * std::complex<double>(0.0, double(m));
          }
          auto deriv = [&](double phi) {
            std::complex<double> acc = 0.0;
            for (int mi = 0; mi < nm; ++mi) {
              int m = -cs.m_max() + 6 * mi;
              acc += t[mi] * std::exp(std::complex<double>(0.0, m * phi));
            }
            return std::abs(acc);
          };
          edge = std::max(edge, std::max(deriv(0.0), deriv(pi / 3.0)));
          for (int j = 0; j < phi_points; ++j)
            anywhere = std::max(anywhere, deriv((j + 0.5) * pi / 3.0 / phi_points));
        }
    }
  }
  if (anywhere <= 0.0) return 0.0;
  return edge / anywhere;
}

// ---------------------------------------------------------------------------
// Snapshot I/O: the state plus its energy in the shared binary container.

inline void save_state(const StationaryState& s, const std::string& path) {
  Container c;
  c.truncation = s.state.channels().truncation();
  c.meta["kind"] = "stationary";
  c.meta["energy"] = detail::format_meta(s.energy);
  c.meta["J"] = std::to_string(s.J);
  c.meta["time"] = detail::format_meta(s.state.time());
  const RadialGrid& g = s.state.grid();
  c.meta["grid_kind"] = g.stretch() == 0.0 ? "uniform" : "exp";
  c.meta["grid_n"] = std::to_string(g.size());
  c.meta["grid_rmin"] = detail::format_meta(g.r_min());
  c.meta["grid_rmax"] = detail::format_meta(g.r_max());
  c.meta["grid_s"] = detail::format_meta(g.stretch());
  for (int J : s.state.channels().J_values())
    c.put_matrix("F/J" + std::to_string(J), s.state.block(J));
  save_container(path, c);
}

inline StationaryState load_state(const std::string& path) {
  Container c = load_container(path);
  if (c.meta.count("kind") == 0 || c.meta.at("kind") != "stationary")
    throw CheckpointIOFailure(path + ": not a stationary-state container");
  ChannelSet cs(static_cast<int>(c.truncation[0]), static_cast<int>(c.truncation[1]),
                static_cast<int>(c.truncation[2]));
  int n = static_cast<int>(c.meta_number("grid_n"));
  double rmin = c.meta_number("grid_rmin"), rmax = c.meta_number("grid_rmax");
  RadialGrid g = c.meta.at("grid_kind") == "uniform"
                     ? RadialGrid::uniform(n, rmin, rmax)
                     : RadialGrid::exponential(n, rmin, rmax, c.meta_number("grid_s"));
  StationaryState s;
  s.energy = c.meta_number("energy");
  s.J = static_cast<int>(c.meta_number("J"));
  s.state = WavePacket(cs, g, c.meta_number("time"));
  for (int J : cs.J_values()) {
    Eigen::MatrixXcd m = c.get_matrix("F/J" + std::to_string(J));
    if (m.rows() != cs.rows_per_J() || m.cols() != g.size())
      throw CheckpointIOFailure(path + ": block shape mismatch");
    s.state.block(J) = std::move(m);
  }
  return s;
}

}  // namespace hyperkick
