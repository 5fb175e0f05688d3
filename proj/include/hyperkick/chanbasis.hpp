#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hyperkick/angmath.hpp"
#include "hyperkick/container.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/interaction.hpp"
#include "hyperkick/interp.hpp"
#include "hyperkick/parallel.hpp"
#include "hyperkick/radialgrid.hpp"
#include "hyperkick/wavepacket.hpp"

// Channel basis over the hyperangles. For each (J, m) the coupled theta
// equations
//
//   [ (1/w) d/dtheta ( w d/dtheta )
//     - (m^2 + M^2 + 2 m M sin 2theta) / cos^2 2theta
//     - (2J(J+1) - 2M^2) / sin^2 2theta ] P_M
//     - (cos 2theta / sin^2 2theta) (A+_{J,M} P_{M+2} + A-_{J,M} P_{M-2})
//   = -lambda P_M ,        w = sin(4 theta) / 4,   M = -J, -J+2, ..., J
//
// are discretized in flux (weak) form on nodes strictly inside (0, pi/4):
// the w-weighted flux vanishes at both endpoints automatically, the
// weight-absorbed matrix is symmetric, and the constant mode of the J = 0,
// m = 0 problem is an exact discrete eigenvector with lambda = 0. Stored
// eigenvalues are lambda >= 0, ascending; lambda enters the radial equation
// as a + lambda / rho^2 channel barrier.

namespace hyperkick {

class ThetaGrid {
 public:
  ThetaGrid() = default;

  // uniform midpoint grid: faces at k (pi/4)/n, nodes at cell centers
  static ThetaGrid midpoint(int n) {
    if (n < 8) throw ConstraintViolation("ThetaGrid: need at least 8 nodes");
    double h = quarter_pi() / n;
    std::vector<double> nodes(n);
    for (int i = 0; i < n; ++i) nodes[i] = (i + 0.5) * h;
    ThetaGrid g(std::move(nodes));
    char buf[48];
    std::snprintf(buf, sizeof buf, "midpoint:n=%d", n);
    g.descriptor_ = buf;
    g.uniform_ = true;
    return g;
  }

  // arbitrary strictly increasing interior nodes (mainly for experiments);
  // the endpoint singularities theta = 0, pi/4 must not carry nodes
  explicit ThetaGrid(std::vector<double> nodes) : theta_(std::move(nodes)) {
    int n = static_cast<int>(theta_.size());
    if (n < 8) throw ConstraintViolation("ThetaGrid: need at least 8 nodes");
    const double eps = 1e-12;
    for (int i = 0; i < n; ++i) {
      if (theta_[i] < eps || theta_[i] > quarter_pi() - eps)
        throw SingularGrid("ThetaGrid: node at or beyond the sector endpoints");
      if (i > 0 && theta_[i] <= theta_[i - 1])
        throw SingularGrid("ThetaGrid: nodes must increase strictly");
    }
    faces_.resize(n + 1);
    faces_[0] = 0.0;
    faces_[n] = quarter_pi();
    for (int i = 1; i < n; ++i) faces_[i] = 0.5 * (theta_[i - 1] + theta_[i]);
    w_.resize(n);
    cellw_.resize(n);
    for (int i = 0; i < n; ++i) {
      w_[i] = 0.25 * std::sin(4.0 * theta_[i]);
      cellw_[i] = w_[i] * (faces_[i + 1] - faces_[i]);
    }
    char buf[48];
    std::snprintf(buf, sizeof buf, "custom:n=%d,h=%016llx", n,
                  static_cast<unsigned long long>(node_hash()));
    descriptor_ = buf;
  }

  int size() const { return static_cast<int>(theta_.size()); }
  const std::vector<double>& nodes() const { return theta_; }
  const std::vector<double>& faces() const { return faces_; }
  // sin(4 theta)/4 at the nodes
  const std::vector<double>& weight() const { return w_; }
  // quadrature weights: weight x cell width (sum f_i cellw_i ~ int f w dtheta)
  const std::vector<double>& cell_weights() const { return cellw_; }
  bool uniform() const { return uniform_; }
  const std::string& descriptor() const { return descriptor_; }
  bool same_as(const ThetaGrid& other) const { return descriptor_ == other.descriptor_; }

  static constexpr double quarter_pi() { return 0.25 * 3.141592653589793238462643383279502884; }

 private:
  std::uint64_t node_hash() const {
    return detail::fnv1a64(reinterpret_cast<const char*>(theta_.data()),
                           theta_.size() * sizeof(double));
  }

  std::vector<double> theta_, faces_, w_, cellw_;
  bool uniform_ = false;
  std::string descriptor_;
};

struct ThetaEigenpair {
  int J = 0;
  int m = 0;
  double lambda = 0.0;      // >= 0; the paper-sign eigenvalue is -lambda
  Eigen::MatrixXd P;        // (J+1) x n_theta, row (M+J)/2 holds P_M(theta_i)

  double ebar() const { return -lambda; }
  static int row_of_M(int J, int M) { return (M + J) / 2; }
};

// Symmetric weight-absorbed matrix of the coupled theta operator (+lambda
// sign convention), components ordered M = -J, -J+2, ..., J.
inline Eigen::MatrixXd theta_operator_matrix(int J, int m, const ThetaGrid& grid) {
  if (J < 0 || J % 2 != 0) throw ConstraintViolation("theta operator: J must be even >= 0");
  if (m % 6 != 0) throw ConstraintViolation("theta operator: m must be a multiple of 6");
  int n = grid.size();
  int comps = J + 1;
  const auto& th = grid.nodes();
  const auto& faces = grid.faces();
  const auto& cellw = grid.cell_weights();

  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(comps * n, comps * n);
  // flux (stiffness) part, identical for every component
  std::vector<double> cond(n + 1, 0.0);
  for (int k = 1; k < n; ++k)
    cond[k] = 0.25 * std::sin(4.0 * faces[k]) / (th[k] - th[k - 1]);
  for (int c = 0; c < comps; ++c) {
    int off = c * n;
    for (int i = 0; i < n; ++i) {
      A(off + i, off + i) += cond[i] + cond[i + 1];
      if (i + 1 < n) {
        A(off + i, off + i + 1) -= cond[i + 1];
        A(off + i + 1, off + i) -= cond[i + 1];
      }
    }
  }
  // potential and M-coupling terms, weighted by the cell measure
  for (int c = 0; c < comps; ++c) {
    int M = -J + 2 * c;
    for (int i = 0; i < n; ++i) {
      double c2 = std::cos(2.0 * th[i]), s2 = std::sin(2.0 * th[i]);
      double diag = (double(m) * m + double(M) * M + 2.0 * m * M * s2) / (c2 * c2) +
                    (2.0 * J * (J + 1) - 2.0 * M * M) / (s2 * s2);
      A(c * n + i, c * n + i) += cellw[i] * diag;
      if (c + 1 < comps) {
        double coup = cellw[i] * std::cos(2.0 * th[i]) * ladder_A(J, M, +1) / (s2 * s2);
        A(c * n + i, (c + 1) * n + i) += coup;
        A((c + 1) * n + i, c * n + i) += coup;
      }
    }
  }
  // absorb the mass matrix: S = D^{-1/2} A D^{-1/2}, D = diag(cellw);
  // scaling each entry once keeps the result exactly symmetric
  Eigen::VectorXd dinv(comps * n);
  for (int c = 0; c < comps; ++c)
    for (int i = 0; i < n; ++i) dinv[c * n + i] = 1.0 / std::sqrt(cellw[i]);
  for (Eigen::Index i = 0; i < A.rows(); ++i) {
    A(i, i) *= dinv[i] * dinv[i];
    for (Eigen::Index j = i + 1; j < A.cols(); ++j) {
      A(i, j) *= dinv[i] * dinv[j];
      A(j, i) = A(i, j);
    }
  }
  return A;
}

// deterministic sign convention: the largest-|value| sample ends up positive
inline void fix_sign(Eigen::MatrixXd& P) {
  double best = 0.0;
  for (Eigen::Index c = 0; c < P.rows(); ++c)
    for (Eigen::Index i = 0; i < P.cols(); ++i)
      if (std::abs(P(c, i)) > std::abs(best)) best = P(c, i);
  if (best < 0.0) P = -P;
}

// Lowest `count` eigenpairs for one (J, m); eigenvalues lambda ascending,
// functions orthonormal under sum_M int P P (sin 4theta / 4) dtheta and
// phase-fixed so the largest-|value| sample of each is positive.
inline std::vector<ThetaEigenpair> solve_theta(int J, int m, const ThetaGrid& grid, int count) {
  int n = grid.size();
  if (count < 1 || count > n)
    throw ConstraintViolation("solve_theta: count must be in [1, grid size]");

  // m < 0 maps onto m > 0 by reflecting M -> -M; solve the nonnegative case
  if (m < 0) {
    std::vector<ThetaEigenpair> mirrored = solve_theta(J, -m, grid, count);
    for (auto& p : mirrored) {
      p.m = m;
      p.P = p.P.colwise().reverse().eval();  // row (M+J)/2 <-> row (-M+J)/2
      fix_sign(p.P);
    }
    return mirrored;
  }

  Eigen::MatrixXd S = theta_operator_matrix(J, m, grid);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(S);
  if (es.info() != Eigen::Success) throw NoConvergence("solve_theta: eigensolver failed");

  const auto& cellw = grid.cell_weights();
  int comps = J + 1;
  std::vector<ThetaEigenpair> out(count);
  for (int k = 0; k < count; ++k) {
    ThetaEigenpair& p = out[k];
    p.J = J;
    p.m = m;
    p.lambda = es.eigenvalues()[k];
    p.P.resize(comps, n);
    for (int c = 0; c < comps; ++c)
      for (int i = 0; i < n; ++i)
        p.P(c, i) = es.eigenvectors()(c * n + i, k) / std::sqrt(cellw[i]);
    fix_sign(p.P);
  }
  return out;
}

class ChannelBasis {
 public:
  ChannelBasis() = default;

  static ChannelBasis build(const ChannelSet& channels, int theta_points = 500) {
    return build(channels, ThetaGrid::midpoint(theta_points));
  }

  static ChannelBasis build(const ChannelSet& channels, const ThetaGrid& grid) {
    ChannelBasis b;
    b.channels_ = channels;
    b.grid_ = grid;
    b.pairs_.resize(channels.J_count() * channels.m_count());
    std::vector<std::pair<int, int>> jobs;  // (J, m)
    for (int J : channels.J_values())
      for (int mi = 0; mi < channels.m_count(); ++mi)
        jobs.emplace_back(J, -channels.m_max() + 6 * mi);
    parallel_for(jobs.size(), [&](std::size_t k) {
      auto [J, m] = jobs[k];
      b.pairs_[b.slot(J, m)] = solve_theta(J, m, grid, channels.n_count());
    });
    b.build_G();
    return b;
  }

  static ChannelBasis build_cached(const ChannelSet& channels, int theta_points,
                                   const std::string& cache_dir) {
    ChannelBasis fresh;
    fresh.channels_ = channels;
    fresh.grid_ = ThetaGrid::midpoint(theta_points);
    std::filesystem::create_directories(cache_dir);
    std::string path = cache_dir + "/basis_" + fresh.cache_key() + ".hkb";
    if (std::filesystem::exists(path)) return load(path);
    ChannelBasis b = build(channels, theta_points);
    b.save(path);
    return b;
  }

  const ChannelSet& channels() const { return channels_; }
  const ThetaGrid& grid() const { return grid_; }

  const std::vector<ThetaEigenpair>& eigenpairs(int J, int m) const {
    return pairs_.at(slot(J, m));
  }
  const ThetaEigenpair& pair(int J, int m, int n) const {
    const ChannelIndex idx{J, m, n};
    idx.validate();
    if (!channels_.contains(idx))
      throw UnsolvedChannel("channel (" + std::to_string(J) + "," + std::to_string(m) + "," +
                            std::to_string(n) + ") outside the solved truncation");
    return eigenpairs(J, m)[n];
  }
  double lambda(int J, int m, int n) const { return pair(J, m, n).lambda; }

  // Phi^(J)_{m,n} at (theta node, phi, beta, gamma)
  std::complex<double> channel_function_at(const ChannelIndex& idx, int theta_node,
                                           const EulerAngles& ang, double phi) const {
    const ThetaEigenpair& p = pair(idx.J, idx.m, idx.n);
    return angular_sum(p, idx, p.P.col(theta_node), ang, phi);
  }

  // Phi^(J)_{m,n} at arbitrary theta (cubic interpolation on the midpoint grid)
  std::complex<double> channel_function(const ChannelIndex& idx, double theta,
                                        const EulerAngles& ang, double phi) const {
    if (!grid_.uniform())
      throw ConstraintViolation("channel_function: interpolation needs the midpoint grid");
    const ThetaEigenpair& p = pair(idx.J, idx.m, idx.n);
    double h = ThetaGrid::quarter_pi() / grid_.size();
    double t = theta / h - 0.5;
    Eigen::VectorXd col(p.P.rows());
    for (Eigen::Index c = 0; c < p.P.rows(); ++c) {
      Eigen::VectorXd rowvals = p.P.row(c).transpose();
      col[c] = hermite_uniform(rowvals, t);
    }
    return angular_sum(p, idx, col, ang, phi);
  }

  // G^(J',J)_{m,n',n} = sum_M int P^(J',m)_{M,n'} P^(J,m)_{M,n} D^(J',J)_M w dtheta;
  // zero when |J - J'| > 2, symmetric under (J',n') <-> (J,n)
  double coupling_G(int Jp, int J, int m, int np, int n) const {
    if (std::abs(J - Jp) > 2) return 0.0;
    if (Jp > J) return coupling_G(J, Jp, m, n, np);
    pair(Jp, m, np);  // truncation checks
    pair(J, m, n);
    return G_.at(G_slot(Jp, J, m))(np, n);
  }

  // 1 - |projection of g onto the retained (J,m) set|^2 / |g|^2 under the
  // theta measure; g is sampled on the grid nodes, one row per M component
  double completeness_defect(int J, int m, const Eigen::MatrixXd& g) const {
    const auto& set = eigenpairs(J, m);
    if (g.rows() != J + 1 || g.cols() != grid_.size())
      throw GridMismatch("completeness_defect: sample shape mismatch");
    const auto& cw = grid_.cell_weights();
    double g2 = 0.0;
    for (Eigen::Index c = 0; c < g.rows(); ++c)
      for (int i = 0; i < grid_.size(); ++i) g2 += g(c, i) * g(c, i) * cw[i];
    if (g2 <= 0.0) throw EmptyScope("completeness_defect: zero test function");
    double captured = 0.0;
    for (const auto& p : set) {
      double ov = 0.0;
      for (Eigen::Index c = 0; c < g.rows(); ++c)
        for (int i = 0; i < grid_.size(); ++i) ov += g(c, i) * p.P(c, i) * cw[i];
      captured += ov * ov;
    }
    return 1.0 - captured / g2;
  }

  void save(const std::string& path) const {
    Container c;
    c.truncation = channels_.truncation();
    c.meta["kind"] = "chanbasis";
    c.meta["theta_grid"] = grid_.descriptor();
    c.meta["theta_n"] = std::to_string(grid_.size());
    for (int J : channels_.J_values())
      for (int mi = 0; mi < channels_.m_count(); ++mi) {
        int m = -channels_.m_max() + 6 * mi;
        const auto& set = eigenpairs(J, m);
        std::string tag = "J" + std::to_string(J) + "/m" + std::to_string(m);
        Eigen::VectorXd lam(set.size());
        Eigen::MatrixXd stack(set.size() * (J + 1), grid_.size());
        for (std::size_t k = 0; k < set.size(); ++k) {
          lam[k] = set[k].lambda;
          stack.middleRows(k * (J + 1), J + 1) = set[k].P;
        }
        c.put_vector("L/" + tag, lam);
        c.put_real_matrix("P/" + tag, stack);
      }
    save_container(path, c);
  }

  static ChannelBasis load(const std::string& path) {
    Container c = load_container(path);
    if (c.meta.count("kind") == 0 || c.meta.at("kind") != "chanbasis")
      throw CheckpointIOFailure(path + ": not a channel-basis container");
    ChannelBasis b;
    b.channels_ = ChannelSet(static_cast<int>(c.truncation[0]), static_cast<int>(c.truncation[1]),
                             static_cast<int>(c.truncation[2]));
    b.grid_ = ThetaGrid::midpoint(static_cast<int>(c.meta_number("theta_n")));
    if (b.grid_.descriptor() != c.meta.at("theta_grid"))
      throw CheckpointIOFailure(path + ": unsupported theta grid kind");
    b.pairs_.resize(b.channels_.J_count() * b.channels_.m_count());
    for (int J : b.channels_.J_values())
      for (int mi = 0; mi < b.channels_.m_count(); ++mi) {
        int m = -b.channels_.m_max() + 6 * mi;
        std::string tag = "J" + std::to_string(J) + "/m" + std::to_string(m);
        Eigen::VectorXd lam = c.get_vector("L/" + tag);
        Eigen::MatrixXd stack = c.get_real_matrix("P/" + tag);
        if (lam.size() != b.channels_.n_count() ||
            stack.rows() != lam.size() * (J + 1) || stack.cols() != b.grid_.size())
          throw CheckpointIOFailure(path + ": basis block shape mismatch");
        auto& set = b.pairs_[b.slot(J, m)];
        set.resize(lam.size());
        for (Eigen::Index k = 0; k < lam.size(); ++k) {
          set[k].J = J;
          set[k].m = m;
          set[k].lambda = lam[k];
          set[k].P = stack.middleRows(k * (J + 1), J + 1);
        }
      }
    b.build_G();
    return b;
  }

  std::string cache_key() const {
    char buf[96];
    std::snprintf(buf, sizeof buf, "J%d_m%d_n%d_%s", channels_.J_max(), channels_.m_max(),
                  channels_.n_max(), grid_.descriptor().c_str());
    std::string s = buf;
    for (auto& ch : s)
      if (ch == ':' || ch == '=' || ch == ',') ch = '-';
    return s;
  }

 private:
  int slot(int J, int m) const {
    if (J < 0 || J % 2 != 0 || J > channels_.J_max() || m % 6 != 0 ||
        std::abs(m) > channels_.m_max())
      throw UnsolvedChannel("channel basis: (J=" + std::to_string(J) + ", m=" +
                            std::to_string(m) + ") outside the solved truncation");
    return (J / 2) * channels_.m_count() + (m + channels_.m_max()) / 6;
  }

  int G_slot(int Jp, int J, int m) const {
    // pairs with Jp <= J and J - Jp in {0, 2}
    int pair_index = (J / 2) * 2 - (J - Jp) / 2;  // (0,0)=0,(0,2)=1,(2,2)=2,(2,4)=3,...
    return pair_index * channels_.m_count() + (m + channels_.m_max()) / 6;
  }

  void build_G() {
    int npairs = channels_.J_max() == 0 ? 1 : channels_.J_max() / 2 * 2 + 1;
    G_.assign(npairs * channels_.m_count(),
              Eigen::MatrixXd::Zero(channels_.n_count(), channels_.n_count()));
    const auto& cw = grid_.cell_weights();
    for (int J : channels_.J_values())
      for (int Jp = std::max(0, J - 2); Jp <= J; Jp += 2)
        for (int mi = 0; mi < channels_.m_count(); ++mi) {
          int m = -channels_.m_max() + 6 * mi;
          Eigen::MatrixXd& G = G_[G_slot(Jp, J, m)];
          const auto& setp = eigenpairs(Jp, m);
          const auto& set = eigenpairs(J, m);
          int Mmin = std::min(J, Jp);
          for (int M = -Mmin; M <= Mmin; M += 2) {
            double D = overlap_D(Jp, J, M);
            int rp = ThetaEigenpair::row_of_M(Jp, M);
            int r = ThetaEigenpair::row_of_M(J, M);
            for (int np = 0; np < channels_.n_count(); ++np)
              for (int n = 0; n < channels_.n_count(); ++n) {
                double acc = 0.0;
                for (int i = 0; i < grid_.size(); ++i)
                  acc += setp[np].P(rp, i) * set[n].P(r, i) * cw[i];
                G(np, n) += D * acc;
              }
          }
        }
  }

  std::complex<double> angular_sum(const ThetaEigenpair& p, const ChannelIndex& idx,
                                   const Eigen::VectorXd& Pcol, const EulerAngles& ang,
                                   double phi) const {
    const double pi = 3.141592653589793238462643383279502884;
    std::complex<double> acc = 0.0;
    for (int c = 0; c <= idx.J; ++c) {
      int M = -idx.J + 2 * c;
      acc += Pcol[c] * wigner_d(RotIndex{idx.J, 0, M}, ang.beta) *
             std::exp(std::complex<double>(0.0, -M * ang.gamma));
    }
    return acc * std::sqrt(3.0 / pi) * std::exp(std::complex<double>(0.0, idx.m * phi)) *
           std::sqrt((2.0 * idx.J + 1.0) / (8.0 * pi * pi));
  }

  ChannelSet channels_;
  ThetaGrid grid_;
  std::vector<std::vector<ThetaEigenpair>> pairs_;
  std::vector<Eigen::MatrixXd> G_;  // per (J'<=J pair, m): (n', n)
};

// ---------------------------------------------------------------------------
// Potential coupling W^(J)_{m,n;m',n'}(rho)
//
// The Euler-angle integral collapses by Wigner orthogonality, and the phi
// integral of all three pair terms reduces to a single-pair Fourier
// coefficient over one full period of r12(phi):
//   W = 3 sum_M int P^(Jm)_{M,n} P^(Jm')_{M,n'} Vhat_{m-m'}(rho, theta) w dtheta
//   Vhat_D(rho, theta) = (2/pi) int_0^{pi/2} cos(D phi) V(r12(rho,theta,phi)) dphi
// which is real, so W is real symmetric and block-diagonal in J.

namespace detail {

// Vhat rows for Delta = 0, 6, ..., 6*(n_delta-1) at every theta node
inline Eigen::MatrixXd pair_fourier(const ThetaGrid& grid, double rho, const PairPotential& pot,
                                    int phi_points, int n_delta) {
  const double pi = 3.141592653589793238462643383279502884;
  int P = phi_points;
  Eigen::MatrixXd cosw(n_delta, P);
  for (int d = 0; d < n_delta; ++d)
    for (int j = 0; j < P; ++j)
      cosw(d, j) = std::cos(6.0 * d * (j + 0.5) * (0.5 * pi / P)) / P;
  Eigen::MatrixXd vals(P, grid.size());
  for (int i = 0; i < grid.size(); ++i) {
    double c2t = std::cos(2.0 * grid.nodes()[i]);
    for (int j = 0; j < P; ++j) {
      double phi = (j + 0.5) * (0.5 * pi / P);
      double r = rho * std::pow(3.0, -0.25) * std::sqrt(1.0 + c2t * std::cos(2.0 * phi));
      vals(j, i) = pot(r);
    }
  }
  return cosw * vals;  // (2/pi) * (pi/2)/P = 1/P absorbed into cosw
}

}  // namespace detail

// Single coupling element (mostly for verification; the table below is the
// production path). Throws MissingCoupling when the J's differ: W is
// block-diagonal in J.
inline double coupling_W(const ChannelBasis& basis, const ChannelIndex& a, const ChannelIndex& b,
                         double rho, const PairPotential& pot, int phi_points = 240) {
  if (a.J != b.J)
    throw MissingCoupling("coupling_W: W is block-diagonal in J; got J=" + std::to_string(a.J) +
                          " vs " + std::to_string(b.J));
  const ThetaEigenpair& pa = basis.pair(a.J, a.m, a.n);
  const ThetaEigenpair& pb = basis.pair(b.J, b.m, b.n);
  int n_delta = std::abs(a.m - b.m) / 6 + 1;
  Eigen::MatrixXd vhat = detail::pair_fourier(basis.grid(), rho, pot, phi_points, n_delta);
  const auto& cw = basis.grid().cell_weights();
  double acc = 0.0;
  for (int c = 0; c <= a.J; ++c)
    for (int i = 0; i < basis.grid().size(); ++i)
      acc += pa.P(c, i) * pb.P(c, i) * cw[i] * vhat(n_delta - 1, i);
  return 3.0 * acc;
}

// Dense W blocks on a radial grid: block(J, k) is the rows_per_J x rows_per_J
// real symmetric coupling matrix at rho = grid.nodes()[k], rows ordered like
// ChannelSet::row_of.
class CouplingTable {
 public:
  CouplingTable() = default;

  static CouplingTable build(const ChannelBasis& basis, const RadialGrid& grid,
                             const PairPotential& pot, int phi_points = 240) {
    const ChannelSet& cs = basis.channels();
    CouplingTable t;
    t.channels_ = cs;
    t.grid_ = grid;
    t.phi_points_ = phi_points;
    t.potential_ = pot.curve.descriptor();
    t.basis_key_ = basis.cache_key();
    t.w_.resize(cs.J_count());
    for (int J : cs.J_values())
      t.w_[J / 2].assign(grid.size(),
                         Eigen::MatrixXd::Zero(cs.rows_per_J(), cs.rows_per_J()));

    int n_delta = 2 * (cs.m_max() / 6) + 1;  // Delta = |m - m'| up to 2 m_max
    int nth = basis.grid().size();
    const auto& cw = basis.grid().cell_weights();

    // stacked P matrices: rows n, columns (M component, theta node)
    std::vector<std::vector<Eigen::MatrixXd>> stacks(cs.J_count());
    for (int J : cs.J_values()) {
      auto& sj = stacks[J / 2];
      sj.resize(cs.m_count());
      for (int mi = 0; mi < cs.m_count(); ++mi) {
        int m = -cs.m_max() + 6 * mi;
        const auto& set = basis.eigenpairs(J, m);
        Eigen::MatrixXd s(cs.n_count(), (J + 1) * nth);
        for (int n = 0; n < cs.n_count(); ++n)
          for (int c = 0; c <= J; ++c)
            s.block(n, c * nth, 1, nth) = set[n].P.row(c);
        sj[mi] = std::move(s);
      }
    }

    parallel_for(static_cast<std::size_t>(grid.size()), [&](std::size_t k) {
      Eigen::MatrixXd vhat =
          detail::pair_fourier(basis.grid(), grid.nodes()[k], pot, phi_points, n_delta);
      for (int J : cs.J_values()) {
        Eigen::MatrixXd& W = t.w_[J / 2][k];
        for (int mi = 0; mi < cs.m_count(); ++mi)
          for (int mj = mi; mj < cs.m_count(); ++mj) {
            Eigen::VectorXd d((J + 1) * nth);
            for (int c = 0; c <= J; ++c)
              for (int i = 0; i < nth; ++i)
                d[c * nth + i] = 3.0 * cw[i] * vhat(mj - mi, i);
            Eigen::MatrixXd blockW =
                stacks[J / 2][mi] * d.asDiagonal() * stacks[J / 2][mj].transpose();
            if (mj == mi)  // make the stored matrix exactly symmetric
              blockW = (0.5 * (blockW + blockW.transpose())).eval();
            W.block(mi * cs.n_count(), mj * cs.n_count(), cs.n_count(), cs.n_count()) = blockW;
            if (mj != mi)
              W.block(mj * cs.n_count(), mi * cs.n_count(), cs.n_count(), cs.n_count()) =
                  blockW.transpose();
          }
      }
    });
    return t;
  }

  // Assemble a table from explicitly given coupling matrices: blocks[J/2][k]
  // is the rows_per_J x rows_per_J matrix at grid node k. Used by reduced
  // models that prescribe their own channel coupling instead of deriving it
  // from a pair potential. Matrices must be symmetric; they are stored in
  // exactly symmetrized form.
  static CouplingTable from_blocks(const ChannelSet& cs, const RadialGrid& grid,
                                   std::vector<std::vector<Eigen::MatrixXd>> blocks,
                                   const std::string& tag) {
    if (static_cast<int>(blocks.size()) != cs.J_count())
      throw ConstraintViolation("CouplingTable::from_blocks: need one block list per J");
    int rows = cs.rows_per_J();
    for (auto& per_J : blocks) {
      if (static_cast<int>(per_J.size()) != grid.size())
        throw ConstraintViolation("CouplingTable::from_blocks: need one matrix per rho node");
      for (auto& b : per_J) {
        if (b.rows() != rows || b.cols() != rows)
          throw ConstraintViolation("CouplingTable::from_blocks: matrix shape mismatch");
        double scale = 1.0 + b.cwiseAbs().maxCoeff();
        if ((b - b.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
          throw ConstraintViolation("CouplingTable::from_blocks: matrix is not symmetric");
        b = (0.5 * (b + b.transpose())).eval();
      }
    }
    CouplingTable t;
    t.channels_ = cs;
    t.grid_ = grid;
    t.phi_points_ = 0;
    t.potential_ = "blocks:" + tag;
    t.basis_key_ = "none";
    t.w_ = std::move(blocks);
    return t;
  }

  static CouplingTable build_cached(const ChannelBasis& basis, const RadialGrid& grid,
                                    const PairPotential& pot, int phi_points,
                                    const std::string& cache_dir,
                                    std::size_t cache_byte_cap = std::size_t(1) << 29) {
    std::filesystem::create_directories(cache_dir);
    CouplingTable probe;
    probe.channels_ = basis.channels();
    probe.grid_ = grid;
    probe.phi_points_ = phi_points;
    probe.potential_ = pot.curve.descriptor();
    probe.basis_key_ = basis.cache_key();
    std::string path = cache_dir + "/wtable_" + probe.cache_key() + ".hkb";
    if (std::filesystem::exists(path)) {
      CouplingTable t = load(path);
      if (t.cache_key() == probe.cache_key()) return t;
    }
    CouplingTable t = build(basis, grid, pot, phi_points);
    if (t.byte_size() <= cache_byte_cap) t.save(path);
    return t;
  }

  const ChannelSet& channels() const { return channels_; }
  const RadialGrid& grid() const { return grid_; }

  const Eigen::MatrixXd& block(int J, int rho_index) const {
    if (J < 0 || J % 2 != 0 || J > channels_.J_max())
      throw MissingCoupling("coupling table: J outside truncation");
    return w_.at(J / 2).at(rho_index);
  }

  std::size_t byte_size() const {
    std::size_t total = 0;
    for (const auto& per_J : w_)
      for (const auto& m : per_J) total += sizeof(double) * m.size();
    return total;
  }

  void save(const std::string& path) const {
    Container c;
    c.truncation = channels_.truncation();
    c.meta["kind"] = "couplingtable";
    c.meta["grid"] = grid_.descriptor();
    c.meta["potential"] = potential_;
    c.meta["basis"] = basis_key_;
    c.meta["phi_points"] = std::to_string(phi_points_);
    c.meta["grid_n"] = std::to_string(grid_.size());
    c.meta["grid_rmin"] = format_g(grid_.r_min());
    c.meta["grid_rmax"] = format_g(grid_.r_max());
    c.meta["grid_s"] = format_g(grid_.stretch());
    for (int J : channels_.J_values()) {
      int rows = channels_.rows_per_J();
      Block b;
      b.dims = {grid_.size(), rows, rows};
      b.data.resize(static_cast<std::size_t>(grid_.size()) * rows * rows);
      std::size_t pos = 0;
      for (int k = 0; k < grid_.size(); ++k)
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < rows; ++j) b.data[pos++] = w_[J / 2][k](i, j);
      c.blocks["W/J" + std::to_string(J)] = std::move(b);
    }
    save_container(path, c);
  }

  static CouplingTable load(const std::string& path) {
    Container c = load_container(path);
    if (c.meta.count("kind") == 0 || c.meta.at("kind") != "couplingtable")
      throw CheckpointIOFailure(path + ": not a coupling-table container");
    CouplingTable t;
    t.channels_ = ChannelSet(static_cast<int>(c.truncation[0]), static_cast<int>(c.truncation[1]),
                             static_cast<int>(c.truncation[2]));
    int n = static_cast<int>(c.meta_number("grid_n"));
    double s = c.meta_number("grid_s");
    t.grid_ = s == 0.0 ? RadialGrid::uniform(n, c.meta_number("grid_rmin"),
                                             c.meta_number("grid_rmax"))
                       : RadialGrid::exponential(n, c.meta_number("grid_rmin"),
                                                 c.meta_number("grid_rmax"), s);
    if (t.grid_.descriptor() != c.meta.at("grid"))
      throw CheckpointIOFailure(path + ": radial grid mismatch");
    t.phi_points_ = static_cast<int>(c.meta_number("phi_points"));
    t.potential_ = c.meta.at("potential");
    t.basis_key_ = c.meta.at("basis");
    t.w_.resize(t.channels_.J_count());
    int rows = t.channels_.rows_per_J();
    for (int J : t.channels_.J_values()) {
      const Block& b = c.at("W/J" + std::to_string(J));
      if (b.is_complex || b.dims.size() != 3 || b.dims[0] != t.grid_.size() ||
          b.dims[1] != rows || b.dims[2] != rows)
        throw CheckpointIOFailure(path + ": coupling block shape mismatch");
      auto& per_J = t.w_[J / 2];
      per_J.assign(t.grid_.size(), Eigen::MatrixXd(rows, rows));
      std::size_t pos = 0;
      for (int k = 0; k < t.grid_.size(); ++k)
        for (int i = 0; i < rows; ++i)
          for (int j = 0; j < rows; ++j) per_J[k](i, j) = b.data[pos++];
    }
    return t;
  }

  std::string cache_key() const {
    std::string raw = channels_.descriptor() + "|" + grid_.descriptor() + "|" + potential_ +
                      "|" + basis_key_ + "|phi" + std::to_string(phi_points_);
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(detail::fnv1a64(raw.data(), raw.size())));
    return buf;
  }

 private:
  static std::string format_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  ChannelSet channels_;
  RadialGrid grid_;
  int phi_points_ = 240;
  std::string potential_, basis_key_;
  std::vector<std::vector<Eigen::MatrixXd>> w_;  // [J/2][rho index]
};

}  // namespace hyperkick
