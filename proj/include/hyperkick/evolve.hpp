#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "hyperkick/chanbasis.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/parallel.hpp"
#include "hyperkick/radialgrid.hpp"
#include "hyperkick/units.hpp"
#include "hyperkick/wavepacket.hpp"

// Coupled-channel radial Hamiltonian and Chebyshev time propagation.
//
// Acting on the channel amplitudes F^(J)_{mn}(rho), the Hamiltonian is
//
//   H F = -(1/2 M) (1/rho^5) d/drho(rho^5 dF/drho)
//         + (lambda_{Jmn} / (2 M rho^2)) F + sum_{m'n'} W^(J)(rho) F
//
// in atomic units (hbar = 1), with M the three-body hyperradial mass
// (atom mass / sqrt(3), see units::hyper_mass). Internally states are kept
// in the weight-absorbed form v = sqrt(w rho^5) F, where the substitution
// u = rho^{5/2} F turns the radial operator into
// -(1/2M)[d^2/drho^2 - (15/4)/rho^2] and the grid's quadrature weights make
// plain Euclidean dot products equal the physical inner product. In that
// representation H is real symmetric: the kinetic stencil is symmetric by
// construction, the centrifugal and lambda terms are diagonal, and the
// coupling matrices are symmetric per rho node.
//
// Real-time steps use the Chebyshev expansion of exp(-i H dt) with Bessel-J
// coefficients; imaginary time uses the same recursion with scaled Bessel-I
// coefficients plus renormalization and Gram-Schmidt deflation, which turns
// the propagator into a ground-state (or excited-state) solver.

namespace hyperkick {

namespace detail {

// deterministic pseudo-random stream for power-iteration start vectors
inline std::uint64_t splitmix64(std::uint64_t& s) {
  std::uint64_t z = (s += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline double uniform_pm1(std::uint64_t& s) {
  return 2.0 * (static_cast<double>(splitmix64(s) >> 11) * 0x1.0p-53) - 1.0;
}

}  // namespace detail

class CoupledHamiltonian {
 public:
  // lambda_rows[J/2][row] holds the hyperangular eigenvalue of the channel in
  // that block row (row order as in ChannelSet::row_of). `coupling` may be
  // null for pure kinetic-plus-centrifugal motion.
  CoupledHamiltonian(const ChannelSet& channels, const RadialGrid& grid, double hyper_mass,
                     std::vector<Eigen::VectorXd> lambda_rows,
                     std::shared_ptr<const CouplingTable> coupling = nullptr)
      : channels_(channels), grid_(grid), mass_(hyper_mass), w_(std::move(coupling)) {
    if (!(hyper_mass > 0.0))
      throw ConstraintViolation("CoupledHamiltonian: hyper mass must be positive");
    if (static_cast<int>(lambda_rows.size()) != channels_.J_count())
      throw ConstraintViolation("CoupledHamiltonian: need one lambda vector per J block");
    for (const auto& lr : lambda_rows)
      if (lr.size() != channels_.rows_per_J())
        throw ConstraintViolation("CoupledHamiltonian: lambda vector length != rows per J");
    if (w_) {
      if (!(w_->channels() == channels_))
        throw GridMismatch("CoupledHamiltonian: coupling table channel set differs");
      if (!w_->grid().same_as(grid_))
        throw GridMismatch("CoupledHamiltonian: coupling table radial grid differs");
    }
    lambda_ = std::move(lambda_rows);
    kscale_ = 0.5 / mass_;
    const auto& r = grid_.nodes();
    const auto& w = grid_.weights();
    rho2i_.resize(grid_.size());
    sqrtm_.resize(grid_.size());
    isqrtm_.resize(grid_.size());
    for (int i = 0; i < grid_.size(); ++i) {
      rho2i_[i] = 1.0 / (r[i] * r[i]);
      sqrtm_[i] = std::sqrt(w[i] * std::pow(r[i], 5));
      isqrtm_[i] = 1.0 / sqrtm_[i];
    }
    compute_bounds();
  }

  // lambda values taken from the solved channel basis
  static CoupledHamiltonian from_basis(const ChannelBasis& basis, const RadialGrid& grid,
                                       double hyper_mass,
                                       std::shared_ptr<const CouplingTable> coupling) {
    const ChannelSet& cs = basis.channels();
    std::vector<Eigen::VectorXd> rows(cs.J_count());
    for (int J : cs.J_values()) {
      Eigen::VectorXd lr(cs.rows_per_J());
      for (int r = 0; r < cs.rows_per_J(); ++r)
        lr[r] = basis.lambda(J, cs.m_of_row(r), cs.n_of_row(r));
      rows[J / 2] = std::move(lr);
    }
    return CoupledHamiltonian(cs, grid, hyper_mass, std::move(rows), std::move(coupling));
  }

  // kinetic + inherent (15/4)/rho^2 barrier only: lambda = 0, no coupling
  static CoupledHamiltonian free_motion(const ChannelSet& channels, const RadialGrid& grid,
                                        double hyper_mass) {
    std::vector<Eigen::VectorXd> rows(channels.J_count(),
                                      Eigen::VectorXd::Zero(channels.rows_per_J()));
    return CoupledHamiltonian(channels, grid, hyper_mass, std::move(rows));
  }

  const ChannelSet& channels() const { return channels_; }
  const RadialGrid& grid() const { return grid_; }
  double hyper_mass() const { return mass_; }
  double kinetic_scale() const { return kscale_; }
  const Eigen::VectorXd& lambda_rows(int J) const { return lambda_.at(block_index(J)); }
  const std::shared_ptr<const CouplingTable>& coupling() const { return w_; }

  // [E_lo, E_hi] bracketing the full discrete spectrum: Gershgorin bound
  // tightened by power iterations and re-padded with a 5% margin
  std::pair<double, double> spectral_bounds() const { return {blo_, bhi_}; }

  // manual override (restart caches, bounds-violation tests)
  void set_spectral_bounds(double lo, double hi) {
    if (!(lo < hi)) throw ConstraintViolation("set_spectral_bounds: need lo < hi");
    blo_ = lo;
    bhi_ = hi;
  }

  // H acting on one J block in the weight-absorbed representation
  // (rows_per_J x grid.size() matrices of v = sqrt(w rho^5) F values)
  template <typename Scalar>
  void apply_weighted(int J, const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& v,
                      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& out) const {
    int jb = block_index(J);
    int rows = channels_.rows_per_J();
    int n = grid_.size();
    if (v.rows() != rows || v.cols() != n)
      throw GridMismatch("apply_weighted: block shape differs from channel set / grid");
    out.resize(rows, n);
    const Eigen::VectorXd& lam = lambda_[jb];
    parallel_for(static_cast<std::size_t>(rows), [&](std::size_t r) {
      using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
      Vec in = v.row(static_cast<Eigen::Index>(r)).transpose();
      Vec kin;
      grid_.apply_neg_d2(in, kin);
      double barrier = 3.75 + lam[static_cast<Eigen::Index>(r)];
      for (int k = 0; k < n; ++k)
        out(static_cast<Eigen::Index>(r), k) =
            kscale_ * (kin[k] + barrier * rho2i_[k] * in[k]);
    });
    if (w_) {
      parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
        out.col(static_cast<Eigen::Index>(k)) +=
            w_->block(J, static_cast<int>(k)) * v.col(static_cast<Eigen::Index>(k));
      });
    }
  }

  WavePacket apply(const WavePacket& wp) const {
    require_compatible(wp);
    WavePacket out(channels_, grid_, wp.time());
    Eigen::MatrixXcd hv;
    for (int J : channels_.J_values()) {
      Eigen::MatrixXcd v = wp.block(J) * sqrtm_.asDiagonal();
      apply_weighted(J, v, hv);
      out.block(J) = hv * isqrtm_.asDiagonal();
    }
    return out;
  }

  // Re <wp|H|wp>; divide by wp.norm2() for unnormalized packets
  double mean_energy(const WavePacket& wp) const { return std::real(wp.inner(apply(wp))); }

  void require_compatible(const WavePacket& wp) const {
    if (!(wp.channels() == channels_) || !wp.grid().same_as(grid_))
      throw GridMismatch("CoupledHamiltonian: wave packet channel set or grid differs");
  }

  const Eigen::VectorXd& sqrt_measure() const { return sqrtm_; }

 private:
  int block_index(int J) const {
    if (J < 0 || J % 2 != 0 || J > channels_.J_max())
      throw ConstraintViolation("CoupledHamiltonian: J outside truncation");
    return J / 2;
  }

  void compute_bounds() {
    // Gershgorin discs of the weight-absorbed matrix (guaranteed outer bound)
    const Eigen::VectorXd& d0 = grid_.lap0();
    const Eigen::VectorXd& d1 = grid_.lap1();
    const Eigen::VectorXd& d2 = grid_.lap2();
    int n = grid_.size();
    double glo = std::numeric_limits<double>::infinity();
    double ghi = -glo;
    for (int J : channels_.J_values()) {
      const Eigen::VectorXd& lam = lambda_[J / 2];
      for (int k = 0; k < n; ++k) {
        double off_kin = 0.0;
        if (k >= 1) off_kin += std::abs(d1[k - 1]);
        if (k + 1 < n) off_kin += std::abs(d1[k]);
        if (k >= 2) off_kin += std::abs(d2[k - 2]);
        if (k + 2 < n) off_kin += std::abs(d2[k]);
        off_kin *= kscale_;
        const Eigen::MatrixXd* wb = w_ ? &w_->block(J, k) : nullptr;
        for (int r = 0; r < channels_.rows_per_J(); ++r) {
          double diag = kscale_ * (d0[k] + (3.75 + lam[r]) * rho2i_[k]);
          double off = off_kin;
          if (wb) {
            diag += (*wb)(r, r);
            for (int c = 0; c < channels_.rows_per_J(); ++c)
              if (c != r) off += std::abs((*wb)(r, c));
          }
          glo = std::min(glo, diag - off);
          ghi = std::max(ghi, diag + off);
        }
      }
    }
    double hi_p = power_extreme(glo);
    double lo_p = power_extreme(ghi);
    if (lo_p > hi_p) std::swap(lo_p, hi_p);
    double pad = 0.05 * (hi_p - lo_p);
    pad = std::max(pad, 1e-9 * (1.0 + std::max(std::abs(lo_p), std::abs(hi_p))));
    blo_ = std::max(glo, lo_p - pad);
    bhi_ = std::min(ghi, hi_p + pad);
  }

  // Rayleigh quotient after 20 power iterations of (H - sigma): converges to
  // the end of the spectrum farthest from sigma
  double power_extreme(double sigma) const {
    std::uint64_t seed = 0x243f6a8885a308d3ull;
    std::vector<Eigen::MatrixXd> v(channels_.J_count());
    double nrm2 = 0.0;
    for (int J : channels_.J_values()) {
      Eigen::MatrixXd b(channels_.rows_per_J(), grid_.size());
      for (Eigen::Index r = 0; r < b.rows(); ++r)
        for (Eigen::Index c = 0; c < b.cols(); ++c) b(r, c) = detail::uniform_pm1(seed);
      nrm2 += b.squaredNorm();
      v[J / 2] = std::move(b);
    }
    for (auto& b : v) b /= std::sqrt(nrm2);
    std::vector<Eigen::MatrixXd> y(channels_.J_count());
    for (int it = 0; it < 20; ++it) {
      double yn2 = 0.0;
      for (int J : channels_.J_values()) {
        apply_weighted(J, v[J / 2], y[J / 2]);
        y[J / 2] -= sigma * v[J / 2];
        yn2 += y[J / 2].squaredNorm();
      }
      if (yn2 == 0.0) return sigma;  // H is exactly sigma times identity
      double inv = 1.0 / std::sqrt(yn2);
      for (int J : channels_.J_values()) v[J / 2] = y[J / 2] * inv;
    }
    double rq = 0.0;
    for (int J : channels_.J_values()) {
      apply_weighted(J, v[J / 2], y[J / 2]);
      rq += (v[J / 2].array() * y[J / 2].array()).sum();
    }
    return rq;
  }

  ChannelSet channels_;
  RadialGrid grid_;
  double mass_ = 0.0;
  double kscale_ = 0.0;
  std::vector<Eigen::VectorXd> lambda_;
  std::shared_ptr<const CouplingTable> w_;
  Eigen::VectorXd rho2i_, sqrtm_, isqrtm_;
  double blo_ = 0.0, bhi_ = 0.0;
};

struct PropagationConfig {
  double dt = 2.0;                    // atomic time units per step
  double total_time = 0.0;            // atomic time units
  int max_order = 0;                  // Chebyshev order cap; 0 = automatic
  double coefficient_cutoff = 1e-13;  // expansion truncation threshold
  double checkpoint_every = 0.0;      // record cadence in time units; 0 = final only
  std::string checkpoint_dir;         // when set, recorded states are saved here

  void validate() const {
    if (!(dt > 0.0)) throw ConstraintViolation("PropagationConfig: dt must be positive");
    if (!(total_time >= 0.0))
      throw ConstraintViolation("PropagationConfig: total_time must be nonnegative");
    if (max_order < 0) throw ConstraintViolation("PropagationConfig: max_order must be >= 0");
    if (!(coefficient_cutoff > 0.0) || coefficient_cutoff > 1e-8)
      throw ConstraintViolation("PropagationConfig: coefficient cutoff must be in (0, 1e-8]");
    if (!(checkpoint_every >= 0.0))
      throw ConstraintViolation("PropagationConfig: checkpoint cadence must be nonnegative");
  }
};

namespace detail {

inline std::vector<Eigen::MatrixXcd> to_weighted(const WavePacket& wp,
                                                 const Eigen::VectorXd& sqrtm) {
  std::vector<Eigen::MatrixXcd> v;
  v.reserve(static_cast<std::size_t>(wp.channels().J_count()));
  for (int J : wp.channels().J_values()) v.push_back(wp.block(J) * sqrtm.asDiagonal());
  return v;
}

inline void from_weighted(const std::vector<Eigen::MatrixXcd>& v, const Eigen::VectorXd& sqrtm,
                          WavePacket& wp) {
  Eigen::VectorXd inv = sqrtm.cwiseInverse();
  for (int J : wp.channels().J_values()) wp.block(J) = v[J / 2] * inv.asDiagonal();
}

inline double weighted_norm2(const std::vector<Eigen::MatrixXcd>& v) {
  double acc = 0.0;
  for (const auto& b : v) acc += b.squaredNorm();
  return acc;
}

inline std::complex<double> weighted_inner(const std::vector<Eigen::MatrixXcd>& a,
                                           const std::vector<Eigen::MatrixXcd>& b) {
  std::complex<double> acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    acc += (a[i].array().conjugate() * b[i].array()).sum();
  return acc;
}

inline int auto_chebyshev_order(double z) {
  return static_cast<int>(std::ceil(z + 10.0 * std::cbrt(z + 1.0))) + 50;
}

// J_k(z) for k = 0..kmax by downward (Miller) recurrence, normalized through
// J_0 + 2 sum_m J_{2m} = 1. The standard library's cyl_bessel_j fails for
// orders in the thousands, which stiff grids reach routinely; one downward
// sweep is also far cheaper than kmax separate evaluations.
inline std::vector<double> bessel_j_ladder(double z, int kmax) {
  std::vector<double> out(static_cast<std::size_t>(kmax) + 1, 0.0);
  if (z == 0.0) {
    out[0] = 1.0;
    return out;
  }
  int start = kmax + static_cast<int>(std::ceil(2.0 * std::sqrt(40.0 * (z + kmax)))) + 40;
  double jp1 = 0.0, jk = 1e-280, norm = 0.0;
  for (int k = start; k >= 1; --k) {
    double jm1 = (2.0 * k / z) * jk - jp1;
    if (k - 1 <= kmax) out[static_cast<std::size_t>(k - 1)] = jm1;
    if ((k - 1) % 2 == 0 && k - 1 >= 2) norm += 2.0 * jm1;
    jp1 = jk;
    jk = jm1;
    if (std::abs(jk) > 1e250) {
      double s = 1e-250;
      jk *= s;
      jp1 *= s;
      norm *= s;
      for (auto& o : out) o *= s;
    }
  }
  norm += jk;  // jk now holds the unnormalized J_0 value
  for (auto& o : out) o /= norm;
  return out;
}

// number of terms for exp(-i z x), x in [-1,1]: first K past the classical
// turning point where two consecutive Bessel-J factors are below the cutoff
inline int chebyshev_terms(const std::vector<double>& jk, double z, double cutoff) {
  int kmin = std::max(1, static_cast<int>(std::ceil(z)));
  for (int k = kmin; k + 1 < static_cast<int>(jk.size()); ++k)
    if (std::abs(jk[k]) < cutoff && std::abs(jk[k + 1]) < cutoff) return k;
  throw NoConvergence(
      "chebyshev expansion does not reach the coefficient cutoff within the order cap; "
      "raise max_order or shrink the time step");
}

// e^{-z} I_k(z) for k = 0..kmax by downward (Miller) recurrence, normalized
// through e^z = I_0 + 2 sum_k I_k accumulated over the whole recursion
inline std::vector<double> scaled_bessel_i(double z, int kmax) {
  std::vector<double> out(static_cast<std::size_t>(kmax) + 1, 0.0);
  if (z == 0.0) {
    out[0] = 1.0;
    return out;
  }
  int start = kmax + static_cast<int>(std::ceil(2.0 * std::sqrt(40.0 * (z + kmax)))) + 40;
  double ip1 = 0.0, ik = 1e-280, norm = 0.0;
  for (int k = start; k >= 1; --k) {
    double im1 = ip1 + (2.0 * k / z) * ik;
    norm += 2.0 * ik;
    if (k - 1 <= kmax) out[static_cast<std::size_t>(k - 1)] = im1;
    ip1 = ik;
    ik = im1;
    if (std::abs(ik) > 1e250) {
      double s = 1e-250;
      ik *= s;
      ip1 *= s;
      norm *= s;
      for (auto& o : out) o *= s;
    }
  }
  norm += ik;  // ik now holds the unnormalized I_0 value
  for (auto& o : out) o /= norm;
  return out;
}

}  // namespace detail

inline WavePacket apply_H(const CoupledHamiltonian& h, const WavePacket& wp) {
  return h.apply(wp);
}

// One step of exp(-i H dt) via the Chebyshev expansion; dt may be negative
// (time reversal). Norm is preserved to roughly the coefficient cutoff.
inline WavePacket step_chebyshev(const CoupledHamiltonian& h, const WavePacket& wp, double dt,
                                 int max_order = 0, double coefficient_cutoff = 1e-13) {
  h.require_compatible(wp);
  if (!(coefficient_cutoff > 0.0) || coefficient_cutoff > 1e-8)
    throw ConstraintViolation("step_chebyshev: coefficient cutoff must be in (0, 1e-8]");
  auto [lo, hi] = h.spectral_bounds();
  double a = 0.5 * (hi - lo);
  double b = 0.5 * (hi + lo);
  double z = a * std::abs(dt);
  std::complex<double> phase = std::exp(std::complex<double>(0.0, -b * dt));

  WavePacket out = wp;
  out.set_time(wp.time() + dt);
  if (z == 0.0) {
    out.scale(phase);
    return out;
  }
  int order_cap = max_order > 0 ? max_order : detail::auto_chebyshev_order(z);
  std::vector<double> jk = detail::bessel_j_ladder(z, order_cap);
  int K = detail::chebyshev_terms(jk, z, coefficient_cutoff);

  const std::complex<double> unit(0.0, dt >= 0.0 ? -1.0 : 1.0);
  const Eigen::VectorXd& sm = h.sqrt_measure();
  std::vector<Eigen::MatrixXcd> p0 = detail::to_weighted(wp, sm);
  double nrm0 = std::sqrt(detail::weighted_norm2(p0));
  int nb = wp.channels().J_count();
  std::vector<Eigen::MatrixXcd> p1(nb), p2(nb), acc(nb), hv(nb);

  auto apply_scaled = [&](const std::vector<Eigen::MatrixXcd>& vin,
                          std::vector<Eigen::MatrixXcd>& vout) {
    for (int J : wp.channels().J_values()) {
      h.apply_weighted(J, vin[J / 2], hv[J / 2]);
      vout[J / 2] = (hv[J / 2] - b * vin[J / 2]) / a;
    }
  };

  for (int i = 0; i < nb; ++i) acc[i] = jk[0] * p0[i];
  apply_scaled(p0, p1);
  std::complex<double> ck = 2.0 * unit * jk[1];
  for (int i = 0; i < nb; ++i) acc[i] += ck * p1[i];
  std::complex<double> ik = unit;
  for (int k = 2; k <= K; ++k) {
    apply_scaled(p1, p2);
    for (int i = 0; i < nb; ++i) p2[i] = 2.0 * p2[i] - p0[i];
    ik *= unit;
    ck = 2.0 * ik * jk[k];
    double nk = std::sqrt(detail::weighted_norm2(p2));
    if (nk > 8.0 * nrm0)
      throw SpectralBoundsViolated(
          "chebyshev recursion norms grew; spectral bounds do not bracket the spectrum");
    for (int i = 0; i < nb; ++i) {
      acc[i] += ck * p2[i];
      std::swap(p0[i], p1[i]);
      std::swap(p1[i], p2[i]);
    }
  }
  for (auto& bm : acc) bm *= phase;
  detail::from_weighted(acc, sm, out);
  return out;
}

using Observer = std::function<void(double, const WavePacket&)>;

// Evolve by cfg.total_time in steps of cfg.dt. Observers run after every step
// (and once on the initial state). States are recorded every
// cfg.checkpoint_every time units and at the end; with cfg.checkpoint_dir set
// each recorded state is also saved as <dir>/checkpoint_NNNNNN.hkb.
inline std::vector<WavePacket> propagate(const CoupledHamiltonian& h, const WavePacket& start,
                                         const PropagationConfig& cfg,
                                         const std::vector<Observer>& observers = {}) {
  cfg.validate();
  h.require_compatible(start);
  if (start.norm2() <= 0.0) throw ZeroDensityStart("propagate: initial state has zero norm");

  if (!cfg.checkpoint_dir.empty()) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.checkpoint_dir, ec);
    if (ec || !std::filesystem::is_directory(cfg.checkpoint_dir))
      throw CheckpointIOFailure("propagate: cannot create checkpoint directory " +
                                cfg.checkpoint_dir);
  }

  long full_steps = static_cast<long>(std::floor(cfg.total_time / cfg.dt + 1e-9));
  double remainder = cfg.total_time - static_cast<double>(full_steps) * cfg.dt;
  if (remainder < 1e-9 * cfg.dt) remainder = 0.0;
  long stride = 0;
  if (cfg.checkpoint_every > 0.0)
    stride = std::max<long>(1, std::lround(cfg.checkpoint_every / cfg.dt));

  std::vector<WavePacket> trajectory;
  int file_index = 0;
  auto record = [&](const WavePacket& wp) {
    trajectory.push_back(wp);
    if (!cfg.checkpoint_dir.empty()) {
      char name[40];
      std::snprintf(name, sizeof name, "/checkpoint_%06d.hkb", file_index++);
      wp.save(cfg.checkpoint_dir + name);
    }
  };

  WavePacket wp = start;
  for (const auto& obs : observers) obs(wp.time(), wp);
  for (long s = 1; s <= full_steps; ++s) {
    wp = step_chebyshev(h, wp, cfg.dt, cfg.max_order, cfg.coefficient_cutoff);
    for (const auto& obs : observers) obs(wp.time(), wp);
    bool is_last = s == full_steps && remainder == 0.0;
    if ((stride > 0 && s % stride == 0 && !is_last) || is_last) record(wp);
  }
  if (remainder > 0.0) {
    wp = step_chebyshev(h, wp, remainder, cfg.max_order, cfg.coefficient_cutoff);
    for (const auto& obs : observers) obs(wp.time(), wp);
    record(wp);
  }
  if (full_steps == 0 && remainder == 0.0) record(wp);
  return trajectory;
}

struct StationaryState {
  double energy = 0.0;  // hartree
  int J = 0;            // block carrying the dominant norm
  WavePacket state;     // unit norm
};

struct ImagTimeConfig {
  double tau_step = 0.0;              // imaginary time per step; 0 = automatic
  double energy_tol = 1e-12;          // drift per unit imaginary time, relative past |E|=1
  int max_steps = 100000;             // step cap before giving up
  int max_order = 0;                  // Chebyshev order cap; 0 = automatic
  double coefficient_cutoff = 1e-14;  // relative to the leading coefficient

  void validate() const {
    if (!(tau_step >= 0.0))
      throw ConstraintViolation("ImagTimeConfig: tau_step must be nonnegative");
    if (!(energy_tol > 0.0))
      throw ConstraintViolation("ImagTimeConfig: energy_tol must be positive");
    if (max_steps < 1) throw ConstraintViolation("ImagTimeConfig: max_steps must be >= 1");
    if (!(coefficient_cutoff > 0.0))
      throw ConstraintViolation("ImagTimeConfig: coefficient cutoff must be positive");
  }
};

// Imaginary-time evolution exp(-H tau) with renormalization after every step:
// relaxes the guess onto the lowest state having nonzero overlap with it that
// is orthogonal to all `deflate` states (Gram-Schmidt after every step).
// Energy is the Rayleigh quotient; convergence is declared when the energy
// drift per unit imaginary time stays below the tolerance twice in a row.
inline StationaryState propagate_imaginary(const CoupledHamiltonian& h, const WavePacket& guess,
                                           const std::vector<StationaryState>& deflate = {},
                                           const ImagTimeConfig& cfg = {}) {
  cfg.validate();
  h.require_compatible(guess);
  const Eigen::VectorXd& sm = h.sqrt_measure();
  int nb = guess.channels().J_count();

  std::vector<std::vector<Eigen::MatrixXcd>> defl;
  defl.reserve(deflate.size());
  for (const auto& st : deflate) {
    h.require_compatible(st.state);
    auto d = detail::to_weighted(st.state, sm);
    double dn = std::sqrt(detail::weighted_norm2(d));
    if (dn <= 0.0)
      throw ConstraintViolation("propagate_imaginary: deflation state has zero norm");
    for (auto& bm : d) bm /= dn;
    defl.push_back(std::move(d));
  }
  auto orthogonalize = [&](std::vector<Eigen::MatrixXcd>& v) {
    for (int pass = 0; pass < 2; ++pass)
      for (const auto& d : defl) {
        std::complex<double> ov = detail::weighted_inner(d, v);
        for (int i = 0; i < nb; ++i) v[i] -= ov * d[i];
      }
  };

  std::vector<Eigen::MatrixXcd> v = detail::to_weighted(guess, sm);
  double n0 = std::sqrt(detail::weighted_norm2(v));
  if (n0 <= 0.0) throw ZeroDensityStart("propagate_imaginary: guess has zero norm");
  orthogonalize(v);
  double n1 = std::sqrt(detail::weighted_norm2(v));
  if (n1 <= 1e-12 * n0)
    throw NoConvergence("propagate_imaginary: guess lies in the deflated subspace");
  for (auto& bm : v) bm /= n1;

  auto [lo, hi] = h.spectral_bounds();
  double a = std::max(0.5 * (hi - lo), 1e-300);
  double b = 0.5 * (hi + lo);
  double tau = cfg.tau_step > 0.0 ? cfg.tau_step : 100.0 / a;
  double z = a * tau;
  int order_cap = cfg.max_order > 0
                      ? cfg.max_order
                      : static_cast<int>(std::ceil(z + std::sqrt(65.0 * z))) + 40;
  std::vector<double> ci = detail::scaled_bessel_i(z, order_cap);
  int K = -1;
  for (int k = std::max(1, static_cast<int>(std::ceil(z))); k + 1 <= order_cap; ++k)
    if (std::abs(ci[k]) < cfg.coefficient_cutoff * ci[0] &&
        std::abs(ci[k + 1]) < cfg.coefficient_cutoff * ci[0]) {
      K = k;
      break;
    }
  if (K < 0)
    throw NoConvergence(
        "imaginary-time chebyshev expansion does not reach the cutoff within the order cap");

  const auto& Jvals = guess.channels().J_values();
  std::vector<Eigen::MatrixXcd> p0(nb), p1(nb), p2(nb), acc(nb), hv(nb);
  auto apply_scaled = [&](const std::vector<Eigen::MatrixXcd>& vin,
                          std::vector<Eigen::MatrixXcd>& vout) {
    for (int J : Jvals) {
      h.apply_weighted(J, vin[J / 2], hv[J / 2]);
      vout[J / 2] = (hv[J / 2] - b * vin[J / 2]) / a;
    }
  };
  auto rayleigh = [&](const std::vector<Eigen::MatrixXcd>& vin) {
    double e = 0.0;
    for (int J : Jvals) {
      h.apply_weighted(J, vin[J / 2], hv[J / 2]);
      e += std::real((vin[J / 2].array().conjugate() * hv[J / 2].array()).sum());
    }
    return e;
  };

  double energy = rayleigh(v);
  int ok_in_a_row = 0;
  bool converged = false;
  for (int step = 0; step < cfg.max_steps && !converged; ++step) {
    for (int i = 0; i < nb; ++i) {
      p0[i] = v[i];
      acc[i] = ci[0] * v[i];
    }
    apply_scaled(p0, p1);
    for (int i = 0; i < nb; ++i) acc[i] += (-2.0 * ci[1]) * p1[i];
    double sign = 1.0;
    for (int k = 2; k <= K; ++k) {
      apply_scaled(p1, p2);
      for (int i = 0; i < nb; ++i) p2[i] = 2.0 * p2[i] - p0[i];
      double nk2 = detail::weighted_norm2(p2);
      if (nk2 > 64.0)
        throw SpectralBoundsViolated(
            "chebyshev recursion norms grew; spectral bounds do not bracket the spectrum");
      double ckk = 2.0 * sign * ci[k];
      for (int i = 0; i < nb; ++i) {
        acc[i] += ckk * p2[i];
        std::swap(p0[i], p1[i]);
        std::swap(p1[i], p2[i]);
      }
      sign = -sign;
    }
    orthogonalize(acc);
    double an = std::sqrt(detail::weighted_norm2(acc));
    // The lowest retained state shrinks by exp(-tau (E - E_lo_bound)) per
    // step. Once that multiplier is down at the expansion's roundoff floor
    // the renormalized state is pure noise and the energy can never settle.
    if (!(an > 1e-12))
      throw NoConvergence(
          "propagate_imaginary: step multiplier fell below the roundoff floor; "
          "shrink tau_step (the target state must satisfy tau * (E - E_lo) << 36)");
    for (int i = 0; i < nb; ++i) v[i] = acc[i] / an;
    double e_new = rayleigh(v);
    double drift = std::abs(e_new - energy) / tau;
    energy = e_new;
    ok_in_a_row = drift < cfg.energy_tol * std::max(1.0, std::abs(energy)) ? ok_in_a_row + 1 : 0;
    converged = ok_in_a_row >= 2;
  }
  if (!converged)
    throw NoConvergence("propagate_imaginary: energy drift did not settle within max_steps");

  // deterministic global phase: largest-magnitude component made real positive
  std::complex<double> big = 0.0;
  for (const auto& bm : v)
    for (Eigen::Index r = 0; r < bm.rows(); ++r)
      for (Eigen::Index c = 0; c < bm.cols(); ++c)
        if (std::abs(bm(r, c)) > std::abs(big)) big = bm(r, c);
  if (std::abs(big) > 0.0) {
    std::complex<double> rot = std::conj(big) / std::abs(big);
    for (auto& bm : v) bm *= rot;
  }

  StationaryState out;
  out.energy = energy;
  out.state = WavePacket(guess.channels(), h.grid(), 0.0);
  detail::from_weighted(v, sm, out.state);
  double best = -1.0;
  for (int J : Jvals) {
    double nj = out.state.norm2_J(J);
    if (nj > best) {
      best = nj;
      out.J = J;
    }
  }
  return out;
}

}  // namespace hyperkick
