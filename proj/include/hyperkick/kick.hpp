#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <utility>
#include <vector>

#include "hyperkick/chanbasis.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/evolve.hpp"
#include "hyperkick/hypergeom.hpp"
#include "hyperkick/interaction.hpp"
#include "hyperkick/parallel.hpp"
#include "hyperkick/quadrature.hpp"
#include "hyperkick/units.hpp"
#include "hyperkick/wavepacket.hpp"

// Sudden (delta-pulse) rotational excitation of a J = 0 trimer state.
//
// The pulse multiplies the wavefunction by exp(i phase) with
//   phase = C sum_bonds [ iso(r_b) + (aniso(r_b) / 3) (3 cos^2 t_b - 1) ],
// t_b the angle between bond b and the field axis. Each bond direction is a
// fixed body-frame combination cos t_b = a_b u + b_b v with
// u = sin(beta) cos(gamma), v = sin(beta) sin(gamma), so the anisotropic sum
// collapses to a 2x2 quadratic form Q over (u, v):
//   sum_b aniso(r_b) cos^2 t_b = sin^2(beta) [ qbar + dq cos 2(gamma - chi) ],
// qbar = tr(Q)/2, dq = half the eigenvalue gap of Q, chi = its principal-axis
// angle. Integrating exp(i M gamma) against this phase gives a Bessel
// function (even M only; odd M vanishes), which leaves one-dimensional beta
// integrals
//   I^J_M(p, z) = int_0^pi sin(b) d^J_{0M}(b) exp(i p sin^2 b)
//                 J_{M/2}(z sin^2 b) db
// with p = C tr(Q)/2 and z = C dq, and the Euler-space overlap kernel
//   K^J_M = (sqrt(2J+1)/2) exp(i C (S_iso - tr(Q)/3)) i^{|M|/2}
//           exp(i M chi) I^J_{|M|}(p, z).
// The kernel carries everything angular about the pulse; projecting the
// kicked state onto channel functions then needs only the (theta, phi)
// quadrature. Because the shape coordinates enter through the bonds alone,
// every kernel and amplitude is pi/3-periodic in phi, so one sector with the
// m ladder in multiples of 6 suffices.

namespace hyperkick {

// Discretization of the kicked state: radial nodes carrying the projected
// packet, the phi sector rule, the beta quadrature order behind I^J_M, the
// highest J the kernels cover, and the (p, z) lattice step for tabulated
// kernel evaluation (0 evaluates every point by direct beta quadrature).
struct KickQuadrature {
  RadialGrid rho;
  int phi_sector = 40;
  int beta_points = 48;
  int J_max = 4;
  double table_spacing = 0.01;

  void validate() const {
    if (rho.size() < 8) throw ConstraintViolation("KickQuadrature: need at least 8 radial nodes");
    if (phi_sector < 4)
      throw ConstraintViolation("KickQuadrature: need at least 4 phi nodes per sector");
    if (beta_points < 8)
      throw ConstraintViolation("KickQuadrature: need at least 8 beta points");
    if (J_max < 0 || J_max % 2 != 0)
      throw ConstraintViolation("KickQuadrature: J_max must be even and nonnegative");
    if (!(table_spacing >= 0.0))
      throw ConstraintViolation("KickQuadrature: table spacing must be nonnegative");
  }
};

namespace detail {

// J_k extended to negative arguments by parity, J_k(-x) = (-1)^k J_k(x);
// std::cyl_bessel_j alone rejects x < 0, but the kernel tables carry guard
// rows below z = 0 so interpolation stays clean near a vanishing anisotropy.
inline double bessel_even_arg(int k, double x) {
  double v = std::cyl_bessel_j(k, std::abs(x));
  return (x < 0.0 && k % 2 != 0) ? -v : v;
}

inline std::complex<double> quarter_turn(int k) {  // i^k
  switch (((k % 4) + 4) % 4) {
    case 0: return {1.0, 0.0};
    case 1: return {0.0, 1.0};
    case 2: return {-1.0, 0.0};
    default: return {0.0, -1.0};
  }
}

// Catmull-Rom cubic through four equally spaced samples; t in [0, 1] spans
// the middle interval, t = 0 returns f1 exactly.
template <typename T>
inline T catmull4(const T& f0, const T& f1, const T& f2, const T& f3, double t) {
  return 0.5 * (2.0 * f1 + t * ((f2 - f0) + t * ((2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3) +
                                                 t * (3.0 * (f1 - f2) + (f3 - f0)))));
}

// Packed index of the even (J, M >= 0) pairs: (0,0), (2,0), (2,2), (4,0), ...
inline int kernel_pair_index(int J, int M) {
  int h = J / 2;
  return h * (h + 1) / 2 + M / 2;
}
inline int kernel_pair_count(int J_max) {
  int h = J_max / 2 + 1;
  return h * (h + 1) / 2;
}

// Gauss-Legendre evaluation of the beta integrals I^J_M(p, z) in x = cos(b),
// with optional tabulation on a uniform (p, z) lattice read back bicubically.
// Axes are snapped so p = 0 and z = 0 sit exactly on lattice nodes: a
// zero-strength kick reads the pure quadrature value with no interpolation
// error, which keeps that limit exact.
class EulerKernel {
 public:
  EulerKernel() = default;

  EulerKernel(int J_max, int beta_points, double spacing)
      : J_max_(J_max), spacing_(spacing), gl_(gauss_legendre(beta_points)) {
    const int nb = static_cast<int>(gl_.x.size());
    s_.resize(nb);
    for (int l = 0; l < nb; ++l) s_[l] = 1.0 - gl_.x[l] * gl_.x[l];
    d_.assign(kernel_pair_count(J_max_), std::vector<double>(nb));
    for (int J = 0; J <= J_max_; J += 2)
      for (int M = 0; M <= J; M += 2) {
        auto& row = d_[kernel_pair_index(J, M)];
        for (int l = 0; l < nb; ++l) row[l] = wigner_d(RotIndex{J, 0, M}, std::acos(gl_.x[l]));
      }
  }

  int J_max() const { return J_max_; }
  bool tabulated() const { return np_ > 0; }
  double lattice_step() const { return dp_; }

  // Build lattice tables covering [p_lo, p_hi] x [0, z_hi] plus two guard
  // cells beyond each edge. The step grows past the requested spacing only
  // if needed to respect the memory cap. The assembly is factored: phase
  // rows over p, Bessel rows over z, then one weighted inner product per
  // (J, M) pair, so the cost is a few matrix products rather than a Bessel
  // evaluation per lattice cell.
  void set_range(double p_lo, double p_hi, double z_hi) {
    if (spacing_ <= 0.0) return;
    if (!(p_lo <= p_hi) || !(z_hi >= 0.0))
      throw ConstraintViolation("EulerKernel: invalid table range");
    const double cap_bytes = 192.0 * 1024 * 1024;
    double dp = spacing_;
    auto snapped = [](double lo, double hi, double step) {
      double lo0 = step * std::floor(lo / step) - 2.0 * step;
      double hi0 = step * std::ceil(hi / step) + 2.0 * step;
      int n = static_cast<int>(std::llround((hi0 - lo0) / step)) + 1;
      return std::pair<double, int>(lo0, n);
    };
    for (;;) {
      auto [p0, np] = snapped(p_lo, p_hi, dp);
      auto [z0, nz] = snapped(0.0, z_hi, dp);
      if (16.0 * np * nz * kernel_pair_count(J_max_) <= cap_bytes) {
        dp_ = dp;
        p0_ = p0;
        np_ = np;
        z0_ = z0;
        nz_ = nz;
        break;
      }
      dp *= 2.0;
    }
    const int nb = static_cast<int>(s_.size());
    const int orders = J_max_ / 2 + 1;
    Eigen::MatrixXcd E(np_, nb);
    for (int ip = 0; ip < np_; ++ip) {
      double p = p0_ + ip * dp_;
      for (int l = 0; l < nb; ++l) E(ip, l) = std::polar(gl_.w[l], p * s_[l]);
    }
    std::vector<Eigen::MatrixXcd> B(orders, Eigen::MatrixXcd(nb, nz_));
    for (int k = 0; k < orders; ++k)
      for (int iz = 0; iz < nz_; ++iz) {
        double z = z0_ + iz * dp_;
        for (int l = 0; l < nb; ++l) B[k](l, iz) = bessel_even_arg(k, z * s_[l]);
      }
    tab_.assign(kernel_pair_count(J_max_), Eigen::MatrixXcd());
    for (int J = 0; J <= J_max_; J += 2)
      for (int M = 0; M <= J; M += 2) {
        int idx = kernel_pair_index(J, M);
        Eigen::MatrixXcd Ed = E;
        for (int l = 0; l < nb; ++l) Ed.col(l) *= d_[idx][l];
        tab_[idx].noalias() = Ed * B[M / 2];
      }
  }

  // I^J_M for every even (J, M >= 0) pair at one (p, z) point by direct
  // quadrature, sharing the phase and Bessel factors across the pairs.
  void eval_direct(double p, double z, std::complex<double>* out) const {
    const int nb = static_cast<int>(s_.size());
    const int orders = J_max_ / 2 + 1;
    std::vector<std::complex<double>> e(nb);
    std::vector<double> bj(static_cast<std::size_t>(orders) * nb);
    for (int l = 0; l < nb; ++l) e[l] = std::polar(gl_.w[l], p * s_[l]);
    for (int k = 0; k < orders; ++k)
      for (int l = 0; l < nb; ++l) bj[static_cast<std::size_t>(k) * nb + l] = bessel_even_arg(k, z * s_[l]);
    for (int J = 0; J <= J_max_; J += 2)
      for (int M = 0; M <= J; M += 2) {
        int idx = kernel_pair_index(J, M);
        const auto& dw = d_[idx];
        const double* bk = &bj[static_cast<std::size_t>(M / 2) * nb];
        std::complex<double> acc = 0.0;
        for (int l = 0; l < nb; ++l) acc += dw[l] * e[l] * bk[l];
        out[idx] = acc;
      }
  }

  // Same values through the lattice tables when they exist.
  void eval_all(double p, double z, std::complex<double>* out) const {
    if (!tabulated()) {
      eval_direct(p, z, out);
      return;
    }
    double up = (p - p0_) / dp_, uz = (z - z0_) / dp_;
    int ip = std::clamp(static_cast<int>(std::floor(up)), 1, np_ - 3);
    int iz = std::clamp(static_cast<int>(std::floor(uz)), 1, nz_ - 3);
    double tp = up - ip, tz = uz - iz;
    for (std::size_t idx = 0; idx < tab_.size(); ++idx) {
      const Eigen::MatrixXcd& T = tab_[idx];
      std::complex<double> rows[4];
      for (int r = 0; r < 4; ++r)
        rows[r] = catmull4(T(ip - 1 + r, iz - 1), T(ip - 1 + r, iz), T(ip - 1 + r, iz + 1),
                           T(ip - 1 + r, iz + 2), tz);
      out[idx] = catmull4(rows[0], rows[1], rows[2], rows[3], tp);
    }
  }

 private:
  int J_max_ = 0;
  double spacing_ = 0.0;
  QuadratureRule gl_;
  std::vector<double> s_;               // sin^2(beta) at the quadrature nodes
  std::vector<std::vector<double>> d_;  // d^J_{0M}(beta) rows per (J, M) pair
  double dp_ = 0.0, p0_ = 0.0, z0_ = 0.0;
  int np_ = 0, nz_ = 0;
  std::vector<Eigen::MatrixXcd> tab_;
};

// Shape terms of one radial slice on the (theta, phi) node lattice.
struct ShapeSlice {
  Eigen::MatrixXd p, z;     // Bessel-integral arguments
  Eigen::MatrixXcd base;    // exp(i C (S_iso - tr(Q)/3))
  Eigen::MatrixXcd wchi;    // exp(2 i chi)
};

// Copy a packet onto another radial grid (cubic interpolation, zero outside
// the source range) and renormalize. Reference states pass through the same
// routine as the kicked initial state, so shared roundoff cancels in their
// overlaps.
inline WavePacket transfer_packet(const WavePacket& src, const RadialGrid& dst) {
  WavePacket out = src;
  if (!src.grid().same_as(dst)) {
    out = WavePacket(src.channels(), dst, src.time());
    for (int J : src.channels().J_values()) {
      const Eigen::MatrixXcd& b = src.block(J);
      Eigen::MatrixXcd& o = out.block(J);
      for (Eigen::Index r = 0; r < b.rows(); ++r) {
        Eigen::VectorXcd samples = b.row(r).transpose();
        for (int i = 0; i < dst.size(); ++i) o(r, i) = src.grid().interpolate(samples, dst.nodes()[i]);
      }
    }
  }
  out.normalize();
  return out;
}

}  // namespace detail

// The kicked state exp(i phase) Psi0 held in factored node form: per radial
// slice the phase collapses to the (p, z, chi) shape terms and the Euler
// kernels K^J_M follow from the beta integrals. Built by apply_delta_kick;
// consumed by project_to_channels, decompose, and intensity_scan. The slice
// methods are the node machinery those drivers share; they are exposed so
// tests can compare each stage against brute-force quadrature.
class KickField {
 public:
  const LaserKick& kick() const { return kick_; }
  const Polarizabilities& polarizabilities() const { return pol_; }
  const KickQuadrature& quadrature() const { return quad_; }
  const RadialGrid& grid() const { return quad_.rho; }
  const ChannelBasis& basis() const { return basis_; }
  const WavePacket& ground() const { return ground_; }
  double ground_energy() const { return ground_energy_; }

  int theta_count() const { return nth_; }
  int phi_count() const { return nph_; }
  static double sector_width() { return units::pi / 3.0; }
  double phi_node(int j) const { return (j + 0.5) * sector_width() / nph_; }

  // Kernel storage slot for even J <= J_max and even M in [-J, J].
  static int kernel_slot(int J, int M) { return (J / 2) * (J / 2) + (M + J) / 2; }

  // Exact kick phase at one configuration (no tables involved).
  double phase(const HyperPoint& pt, const EulerAngles& ang) const {
    pt.validate();
    double nd[12], t[4];
    node_geometry(pt.theta, pt.phi, nd);
    shape_terms(nd, pt.rho, t);
    double s = std::sin(ang.beta) * std::sin(ang.beta);
    return t[2] + s * (t[0] + t[1] * std::cos(2.0 * ang.gamma - t[3]));
  }

  // Kicked wavefunction exp(i phase) Psi0 at one configuration.
  std::complex<double> value(const HyperPoint& pt, const EulerAngles& ang) const {
    const ChannelSet& cs = ground_.channels();
    std::complex<double> amp = 0.0;
    for (int m = -cs.m_max(); m <= cs.m_max(); m += 6)
      for (int n = 0; n <= cs.n_max(); ++n) {
        Eigen::VectorXcd samples = ground_.block(0).row(cs.row_of(m, n)).transpose();
        std::complex<double> f = grid().interpolate(samples, pt.rho);
        if (f != 0.0) amp += f * basis_.channel_function({0, m, n}, pt.theta, ang, pt.phi);
      }
    return std::polar(1.0, phase(pt, ang)) * amp;
  }

  // Exact single-point kernel K^J_M by direct beta quadrature.
  std::complex<double> kernel_at(int J, int M, const HyperPoint& pt) const {
    if (J < 0 || J % 2 != 0 || M % 2 != 0 || std::abs(M) > J)
      throw ConstraintViolation("kernel_at: need even J >= 0 and even |M| <= J");
    if (J > kern_.J_max())
      throw ConstraintViolation("kernel_at: J exceeds the prepared kernels");
    pt.validate();
    double nd[12], t[4];
    node_geometry(pt.theta, pt.phi, nd);
    shape_terms(nd, pt.rho, t);
    std::vector<std::complex<double>> vals(detail::kernel_pair_count(kern_.J_max()));
    kern_.eval_direct(t[0], t[1], vals.data());
    std::complex<double> core = 0.5 * std::sqrt(2.0 * J + 1.0) *
                                detail::quarter_turn(std::abs(M) / 2) *
                                vals[detail::kernel_pair_index(J, std::abs(M))];
    return std::polar(1.0, t[2] + 0.5 * M * t[3]) * core;
  }

  // Shape terms of radial slice k on the (theta, phi) lattice.
  void slice_terms(int k, detail::ShapeSlice& s) const {
    double rho = grid().nodes()[k];
    s.p.resize(nth_, nph_);
    s.z.resize(nth_, nph_);
    s.base.resize(nth_, nph_);
    s.wchi.resize(nth_, nph_);
    double t[4];
    for (int i = 0; i < nth_; ++i)
      for (int j = 0; j < nph_; ++j) {
        shape_terms(&geo_[12 * (static_cast<std::size_t>(i) * nph_ + j)], rho, t);
        s.p(i, j) = t[0];
        s.z(i, j) = t[1];
        s.base(i, j) = std::polar(1.0, t[2]);
        s.wchi(i, j) = std::polar(1.0, t[3]);
      }
  }

  // Kernels K^J_M for all even J <= J_hi, M in [-J, J], one matrix per slot.
  void slice_kernels(const detail::ShapeSlice& s, int J_hi, std::vector<Eigen::MatrixXcd>& K) const {
    if (J_hi > kern_.J_max())
      throw ConstraintViolation("slice_kernels: J exceeds the prepared kernels");
    const int slots = (J_hi / 2 + 1) * (J_hi / 2 + 1);
    K.assign(slots, Eigen::MatrixXcd(nth_, nph_));
    std::vector<double> cj(J_hi / 2 + 1);
    for (int J = 0; J <= J_hi; J += 2) cj[J / 2] = 0.5 * std::sqrt(2.0 * J + 1.0);
    std::vector<std::complex<double>> vals(detail::kernel_pair_count(kern_.J_max()));
    for (int i = 0; i < nth_; ++i)
      for (int j = 0; j < nph_; ++j) {
        kern_.eval_all(s.p(i, j), s.z(i, j), vals.data());
        const std::complex<double> base = s.base(i, j), w = s.wchi(i, j);
        for (int J = 0; J <= J_hi; J += 2) {
          std::complex<double> wm = 1.0;  // exp(i M chi), M ascending from 0
          for (int M = 0; M <= J; M += 2) {
            std::complex<double> core =
                cj[J / 2] * detail::quarter_turn(M / 2) * vals[detail::kernel_pair_index(J, M)];
            K[kernel_slot(J, M)](i, j) = base * wm * core;
            if (M > 0) K[kernel_slot(J, -M)](i, j) = base * std::conj(wm) * core;
            wm *= w;
          }
        }
      }
  }

  // Euler-free amplitude A(theta, phi) of a J = 0 packet at radial node k:
  // A(i, j) = sum_{m,n} F_{m,n}(rho_k) P^{0,m}_{0,n}(theta_i) exp(i m phi_j).
  void slice_amplitude(const WavePacket& w, int k, Eigen::MatrixXcd& A) const {
    const ChannelSet& cs = w.channels();
    if (!(cs == ground_.channels()))
      throw GridMismatch("slice_amplitude: packet channels differ from the initial state");
    Eigen::MatrixXcd T = Eigen::MatrixXcd::Zero(cs.m_count(), nth_);
    const Eigen::MatrixXcd& block = w.block(0);
    for (int mi = 0; mi < cs.m_count(); ++mi) {
      int m = -cs.m_max() + 6 * mi;
      const auto& eps = basis_.eigenpairs(0, m);
      for (int n = 0; n <= cs.n_max(); ++n) {
        std::complex<double> f = block(cs.row_of(m, n), k);
        if (f != 0.0) T.row(mi) += f * eps[n].P.row(0).cast<std::complex<double>>();
      }
    }
    A.noalias() = T.transpose() * ground_phases_;
  }

 private:
  friend KickField apply_delta_kick(const StationaryState&, const ChannelBasis&,
                                    const LaserKick&, const Polarizabilities&,
                                    const KickQuadrature&);

  KickField() = default;

  // Bond geometry of one (theta, phi) node: per bond the distance ratio and
  // the quadratic-form coefficients a^2, b^2, ab.
  static void node_geometry(double theta, double phi, double* nd) {
    auto g = distance_ratios(theta, phi);
    auto bo = bond_orientations(theta, phi);
    for (int c = 0; c < 3; ++c) {
      nd[4 * c] = g[c];
      nd[4 * c + 1] = bo[c].a * bo[c].a;
      nd[4 * c + 2] = bo[c].b * bo[c].b;
      nd[4 * c + 3] = bo[c].a * bo[c].b;
    }
  }

  // (p, z, isotropic-plus-trace phase, 2 chi) at one node and radius. A
  // negative anisotropy strength folds into z >= 0 by shifting chi.
  void shape_terms(const double* nd, double rho, double* out) const {
    double siso = 0.0, q11 = 0.0, q22 = 0.0, q12 = 0.0;
    for (int c = 0; c < 3; ++c) {
      double r = rho * nd[4 * c];
      siso += pol_.iso(r);
      double bi = pol_.aniso(r);
      q11 += bi * nd[4 * c + 1];
      q22 += bi * nd[4 * c + 2];
      q12 += bi * nd[4 * c + 3];
    }
    double sb = q11 + q22, hd = 0.5 * (q11 - q22);
    double dq = std::hypot(hd, q12);
    double p = 0.5 * kick_.C * sb, z = kick_.C * dq;
    double two_chi = (dq > 0.0 && kick_.C != 0.0) ? std::atan2(q12, hd) : 0.0;
    if (z < 0.0) {
      z = -z;
      two_chi -= units::pi;
    }
    out[0] = p;
    out[1] = z;
    out[2] = kick_.C * (siso - sb / 3.0);
    out[3] = two_chi;
  }

  LaserKick kick_;
  Polarizabilities pol_;
  KickQuadrature quad_;
  ChannelBasis basis_;
  WavePacket ground_;
  double ground_energy_ = 0.0;
  detail::EulerKernel kern_;
  int nth_ = 0, nph_ = 0;
  std::vector<double> geo_;          // 12 doubles per (theta, phi) node
  Eigen::MatrixXcd ground_phases_;   // exp(i m phi_j), initial-state m ladder
};

// Kick a J = 0 stationary state. The state is carried onto the quadrature's
// radial grid (renormalized after interpolation) and the Euler kernels are
// prepared over the (p, z) ranges actually reached by the nodes.
inline KickField apply_delta_kick(const StationaryState& ground, const ChannelBasis& basis,
                                  const LaserKick& kick, const Polarizabilities& pol,
                                  const KickQuadrature& quad) {
  quad.validate();
  if (ground.J != 0)
    throw ConstraintViolation("apply_delta_kick: the initial state must be a J = 0 stationary state");
  if (!(basis.channels() == ground.state.channels()))
    throw GridMismatch("apply_delta_kick: basis channels differ from the initial state");
  if (!basis.grid().uniform())
    throw QuadratureMismatch("apply_delta_kick: the kick quadrature needs the uniform midpoint theta grid");

  KickField f;
  f.kick_ = kick;
  f.pol_ = pol;
  f.quad_ = quad;
  f.basis_ = basis;
  f.ground_energy_ = ground.energy;
  f.ground_ = detail::transfer_packet(ground.state, quad.rho);
  f.nth_ = basis.grid().size();
  f.nph_ = quad.phi_sector;

  const auto& th = basis.grid().nodes();
  f.geo_.resize(12 * static_cast<std::size_t>(f.nth_) * f.nph_);
  for (int i = 0; i < f.nth_; ++i)
    for (int j = 0; j < f.nph_; ++j)
      KickField::node_geometry(th[i], f.phi_node(j),
                               &f.geo_[12 * (static_cast<std::size_t>(i) * f.nph_ + j)]);

  const ChannelSet& cs = f.ground_.channels();
  f.ground_phases_.resize(cs.m_count(), f.nph_);
  for (int mi = 0; mi < cs.m_count(); ++mi) {
    int m = -cs.m_max() + 6 * mi;
    for (int j = 0; j < f.nph_; ++j) f.ground_phases_(mi, j) = std::polar(1.0, m * f.phi_node(j));
  }

  // Scan the (p, z) ranges the nodes reach, then build the kernel tables.
  const int nk = quad.rho.size();
  const int nodes = f.nth_ * f.nph_;
  std::vector<double> pmin(nk), pmax(nk), zmax(nk);
  parallel_for(nk, [&](long k) {
    double rho = quad.rho.nodes()[k];
    double lo = std::numeric_limits<double>::infinity(), hi = -lo, zm = 0.0, t[4];
    for (int nd = 0; nd < nodes; ++nd) {
      f.shape_terms(&f.geo_[12 * static_cast<std::size_t>(nd)], rho, t);
      lo = std::min(lo, t[0]);
      hi = std::max(hi, t[0]);
      zm = std::max(zm, t[1]);
    }
    pmin[k] = lo;
    pmax[k] = hi;
    zmax[k] = zm;
  });
  f.kern_ = detail::EulerKernel(quad.J_max, quad.beta_points, quad.table_spacing);
  f.kern_.set_range(*std::min_element(pmin.begin(), pmin.end()),
                    *std::max_element(pmax.begin(), pmax.end()),
                    *std::max_element(zmax.begin(), zmax.end()));
  return f;
}

namespace detail {

inline void check_projection(const KickField& field, const ChannelBasis& target) {
  if (!target.grid().same_as(field.basis().grid()))
    throw QuadratureMismatch("channel projection: theta grid differs from the kick quadrature");
  if (target.channels().J_max() > field.quadrature().J_max)
    throw ConstraintViolation("channel projection: target J_max exceeds the prepared kernels");
  int span = (target.channels().m_max() + field.ground().channels().m_max()) / 6;
  if (field.phi_count() <= span)
    throw QuadratureMismatch("channel projection: phi sector too coarse for the m truncation");
}

// Per-slice tallies of the direct (kernel-times-amplitude) route.
struct DirectTallies {
  Eigen::MatrixXd pm;        // kernel slot x radial node: weight of |K A|^2
  Eigen::MatrixXcd overlap;  // reference state x radial node: <A_ref | K00 A>
};

// Shared slice driver: projects the kicked state onto the target channels
// (out != nullptr) and/or accumulates the direct-route tallies. Every write
// lands in the slice's own column, so the loop parallelizes cleanly.
inline void project_slices(const KickField& field, const ChannelBasis& target,
                           const std::vector<WavePacket>& references, WavePacket* out,
                           DirectTallies* tally) {
  const ChannelSet& tc = target.channels();
  const int nth = field.theta_count(), nph = field.phi_count();
  const int J_hi = tc.J_max();
  const int nk = field.grid().size();
  const Eigen::VectorXd& meas = field.ground().measure();
  const auto& cw = target.grid().cell_weights();

  Eigen::MatrixXcd proj_phase(nph, tc.m_count());  // conj Fourier row, 1/nph absorbed
  for (int j = 0; j < nph; ++j)
    for (int mi = 0; mi < tc.m_count(); ++mi) {
      int m = -tc.m_max() + 6 * mi;
      proj_phase(j, mi) = std::polar(1.0 / nph, -m * field.phi_node(j));
    }

  if (tally) {
    tally->pm = Eigen::MatrixXd::Zero((J_hi / 2 + 1) * (J_hi / 2 + 1), nk);
    tally->overlap = Eigen::MatrixXcd::Zero(static_cast<Eigen::Index>(references.size()), nk);
  }

  parallel_for(nk, [&](long kl) {
    const int k = static_cast<int>(kl);
    ShapeSlice s;
    field.slice_terms(k, s);
    std::vector<Eigen::MatrixXcd> K;
    field.slice_kernels(s, J_hi, K);
    Eigen::MatrixXcd A;
    field.slice_amplitude(field.ground(), k, A);
    Eigen::MatrixXcd G(nth, nph), gm;
    for (int J = 0; J <= J_hi; J += 2)
      for (int M = -J; M <= J; M += 2) {
        const int slot = KickField::kernel_slot(J, M);
        G = K[slot].cwiseProduct(A);
        if (tally) {
          double acc = 0.0;
          for (int i = 0; i < nth; ++i) {
            double rowsum = 0.0;
            for (int j = 0; j < nph; ++j) rowsum += std::norm(G(i, j));
            acc += cw[i] * rowsum;
          }
          tally->pm(slot, k) = meas[k] * acc / nph;
        }
        if (out) {
          gm.noalias() = G * proj_phase;
          const int c = ThetaEigenpair::row_of_M(J, M);
          for (int mi = 0; mi < tc.m_count(); ++mi) {
            int m = -tc.m_max() + 6 * mi;
            const auto& eps = target.eigenpairs(J, m);
            for (int n = 0; n <= tc.n_max(); ++n) {
              const Eigen::MatrixXd& P = eps[n].P;
              std::complex<double> acc = 0.0;
              for (int i = 0; i < nth; ++i) acc += P(c, i) * cw[i] * gm(i, mi);
              out->block(J)(tc.row_of(m, n), k) += acc;
            }
          }
        }
        if (tally && J == 0 && !references.empty()) {
          // G holds K00 A here
          Eigen::MatrixXcd Ab;
          for (std::size_t b = 0; b < references.size(); ++b) {
            field.slice_amplitude(references[b], k, Ab);
            std::complex<double> acc = 0.0;
            for (int i = 0; i < nth; ++i)
              for (int j = 0; j < nph; ++j) acc += cw[i] * std::conj(Ab(i, j)) * G(i, j);
            tally->overlap(b, k) = meas[k] * acc / static_cast<double>(nph);
          }
        }
      }
  });
}

// J = 0 block inner product over the channels two packets share.
inline std::complex<double> j0_block_inner(const WavePacket& ref, const WavePacket& pkt) {
  const ChannelSet& rc = ref.channels();
  const ChannelSet& pc = pkt.channels();
  int mm = std::min(rc.m_max(), pc.m_max());
  int nn = std::min(rc.n_max(), pc.n_max());
  const Eigen::VectorXd& meas = pkt.measure();
  std::complex<double> acc = 0.0;
  for (int m = -mm; m <= mm; m += 6)
    for (int n = 0; n <= nn; ++n) {
      auto ra = ref.block(0).row(rc.row_of(m, n));
      auto rb = pkt.block(0).row(pc.row_of(m, n));
      for (Eigen::Index k = 0; k < meas.size(); ++k) acc += std::conj(ra[k]) * rb[k] * meas[k];
    }
  return acc;
}

// Survival amplitude <Psi0 | exp(i phase) | Psi0> summed over slices.
inline double survival_sq(const KickField& f) {
  const int nk = f.grid().size();
  const int nth = f.theta_count(), nph = f.phi_count();
  const auto& cw = f.basis().grid().cell_weights();
  const Eigen::VectorXd& meas = f.ground().measure();
  Eigen::VectorXcd per = Eigen::VectorXcd::Zero(nk);
  parallel_for(nk, [&](long kl) {
    const int k = static_cast<int>(kl);
    ShapeSlice s;
    f.slice_terms(k, s);
    std::vector<Eigen::MatrixXcd> K;
    f.slice_kernels(s, 0, K);
    Eigen::MatrixXcd A;
    f.slice_amplitude(f.ground(), k, A);
    std::complex<double> acc = 0.0;
    for (int i = 0; i < nth; ++i)
      for (int j = 0; j < nph; ++j) acc += cw[i] * std::conj(A(i, j)) * K[0](i, j) * A(i, j);
    per[k] = meas[k] * acc / static_cast<double>(nph);
  });
  return std::norm(per.sum());
}

}  // namespace detail

// Project the kicked state onto a channel basis (same theta grid, any
// truncation the prepared kernels cover). The result is the t = 0+ packet.
inline WavePacket project_to_channels(const KickField& field, const ChannelBasis& target) {
  detail::check_projection(field, target);
  WavePacket out(target.channels(), field.grid(), 0.0);
  detail::project_slices(field, target, {}, &out, nullptr);
  return out;
}

// Population of one J manifold by both routes.
struct JPopulation {
  int J = 0;
  std::vector<double> P_M;  // direct-route population per M = -J, -J+2, ..., J
  double direct = 0.0;      // sum of P_M
  double basis = 0.0;       // norm landing in the channel truncation
  double sigma = 0.0;       // relative spread between the two routes
};

// Overlap of the kicked state with one stationary reference state.
struct ReferenceOverlap {
  std::complex<double> amp_direct;  // Euler-kernel route
  std::complex<double> amp_basis;   // channel-projection route
  double direct_sq = 0.0;
  double basis_sq = 0.0;
};

struct DecompositionReport {
  std::vector<JPopulation> populations;      // one entry per even J in the target set
  std::vector<ReferenceOverlap> references;  // matches the reference-state list
  double captured = 0.0;                     // sum of basis-route populations
  double direct_total = 0.0;                 // sum of direct-route populations
  double unbound_direct_sq = 0.0;            // J = 0 population minus bound overlaps
  double unbound_basis_sq = 0.0;
};

// Full decomposition of the kicked state: J/M populations by the direct
// (Euler-kernel) route and the channel-projection route, overlaps with up to
// two J = 0 reference states (ground, faint excited), and the unbound
// remainder. Pass `projected` to keep the projected packet for propagation.
inline DecompositionReport decompose(const KickField& field, const ChannelBasis& target,
                                     const std::vector<StationaryState>& references,
                                     WavePacket* projected = nullptr) {
  detail::check_projection(field, target);
  if (references.size() > 2)
    throw ConstraintViolation("decompose: at most two reference states (ground, excited)");
  std::vector<WavePacket> refs;
  refs.reserve(references.size());
  for (const auto& r : references) {
    if (r.J != 0) throw ConstraintViolation("decompose: reference states must be J = 0");
    if (!(r.state.channels() == field.ground().channels()))
      throw GridMismatch("decompose: reference channels differ from the initial state");
    refs.push_back(detail::transfer_packet(r.state, field.grid()));
  }

  WavePacket pkt(target.channels(), field.grid(), 0.0);
  detail::DirectTallies tally;
  detail::project_slices(field, target, refs, &pkt, &tally);

  const ChannelSet& tc = target.channels();
  DecompositionReport rep;
  for (int J = 0; J <= tc.J_max(); J += 2) {
    JPopulation pop;
    pop.J = J;
    pop.P_M.resize(J + 1);
    for (int Mi = 0; Mi <= J; ++Mi) {
      pop.P_M[Mi] = tally.pm.row(KickField::kernel_slot(J, -J + 2 * Mi)).sum();
      pop.direct += pop.P_M[Mi];
    }
    pop.basis = pkt.norm2_J(J);
    pop.sigma = pop.direct > 0.0 ? std::abs(pop.direct - pop.basis) / pop.direct : 0.0;
    rep.captured += pop.basis;
    rep.direct_total += pop.direct;
    rep.populations.push_back(std::move(pop));
  }

  double bound_direct = 0.0, bound_basis = 0.0;
  for (std::size_t b = 0; b < refs.size(); ++b) {
    ReferenceOverlap ov;
    ov.amp_direct = tally.overlap.row(static_cast<Eigen::Index>(b)).sum();
    ov.amp_basis = detail::j0_block_inner(refs[b], pkt);
    ov.direct_sq = std::norm(ov.amp_direct);
    ov.basis_sq = std::norm(ov.amp_basis);
    bound_direct += ov.direct_sq;
    bound_basis += ov.basis_sq;
    rep.references.push_back(ov);
  }
  rep.unbound_direct_sq = rep.populations.front().direct - bound_direct;
  rep.unbound_basis_sq = rep.populations.front().basis - bound_basis;

  if (projected) *projected = std::move(pkt);
  return rep;
}

// Ground-state survival |<Psi0 | kicked>|^2 against pulse intensity, with a
// least-squares quadratic in u = intensity / intensity_unit (the scaling
// keeps the design matrix conditioned).
struct IntensityScan {
  static constexpr double intensity_unit = 1e14;  // W/cm^2 per fit unit

  double tau_fwhm_fs = 0.0;
  std::vector<double> intensity;  // W/cm^2, as given
  std::vector<double> survival;   // |<Psi0|kicked>|^2 per intensity
  double q0 = 0.0, q1 = 0.0, q2 = 0.0;  // survival ~ q0 + q1 u + q2 u^2
  double fit_rms = 0.0;
};

inline IntensityScan intensity_scan(const std::vector<double>& intensities, double tau_fs,
                                    const StationaryState& ground, const ChannelBasis& basis,
                                    const Polarizabilities& pol, const KickQuadrature& quad) {
  std::vector<double> uniq = intensities;
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 3)
    throw FitUnderdetermined("intensity_scan: need at least three distinct intensities");

  KickQuadrature scan_quad = quad;
  scan_quad.J_max = 0;  // the survival needs only the J = 0 kernel

  IntensityScan out;
  out.tau_fwhm_fs = tau_fs;
  out.intensity = intensities;
  out.survival.reserve(intensities.size());
  for (double I : intensities) {
    KickField f = apply_delta_kick(ground, basis, LaserKick::from_intensity(I, tau_fs), pol, scan_quad);
    out.survival.push_back(detail::survival_sq(f));
  }

  const int n = static_cast<int>(intensities.size());
  Eigen::MatrixXd X(n, 3);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    double u = intensities[i] / IntensityScan::intensity_unit;
    X(i, 0) = 1.0;
    X(i, 1) = u;
    X(i, 2) = u * u;
    y[i] = out.survival[i];
  }
  Eigen::Vector3d q = X.colPivHouseholderQr().solve(y);
  out.q0 = q[0];
  out.q1 = q[1];
  out.q2 = q[2];
  out.fit_rms = std::sqrt((X * q - y).squaredNorm() / n);
  return out;
}

}  // namespace hyperkick
