#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "hyperkick/chanbasis.hpp"
#include "hyperkick/evolve.hpp"
#include "hyperkick/hypergeom.hpp"
#include "hyperkick/parallel.hpp"
#include "hyperkick/wavepacket.hpp"

// Observables on channel wave packets.
//
// The packet is reconstructed pointwise from its channel coefficients,
//   Psi(rho,theta,phi,beta,gamma) = sum_{J,m,n} F^J_mn(rho) Phi^J_mn(...),
// and sampled by a Metropolis walk in (rho, theta, phi, beta, gamma) whose
// target is |Psi|^2 times the volume weights rho^5 (1/4)sin(4 theta) sin(beta)
// (the third Euler angle is ignorable and never enters). Walkers draw every
// random number from a counter-based generator, so chains are reproducible,
// resumable, and independent per (seed, stream) pair; step sizes are tuned
// to a 30-50% acceptance window during burn-in and frozen afterwards.
//
// Estimators quote statistical errors from batch means (autocorrelation-safe
// for chains that are long against the mixing time). On top of the sampler
// sit the pair correlators, kinetic-energy-release histograms with their
// partial-wave split, distance-resolved alignment maps, and principal-frame
// density snapshots. Hyperradius-resolved alignment profiles have a closed
// channel form and are evaluated deterministically: a quadrature-built
// angular table contracts F coefficients against per-(J',J,m) operator
// blocks, and an independent route expands the same signal as a sum of
// channel interference terms weighted by the basis G coefficients.

namespace hyperkick {

// ---------------------------------------------------------------------------
// Output records

struct ObservationRecord {
  enum class Kind { series, histogram, heatmap };

  Kind kind = Kind::series;
  std::string observable;  // what was measured
  std::string scope;       // full / J=2 / scattering / ...
  double time = 0.0;       // packet time stamp (single-time records)
  std::uint64_t seed = 0;  // 0 for deterministic records
  std::string unit_x, unit_y, unit_v;
  std::vector<double> axis_x;  // series/heatmap: points; histogram: bin edges
  std::vector<double> axis_y;  // heatmap only: points
  std::vector<double> values;  // heatmap: x-fastest row-major; NaN = missing
  std::vector<double> errors;  // same layout; empty for deterministic records
  double normalization = 1.0;  // declared histogram mass
  double clipped = 0.0;        // histogram weight that fell outside the edges

  void validate() const {
    auto increasing = [](const std::vector<double>& a) {
      for (std::size_t i = 1; i < a.size(); ++i)
        if (!(a[i] > a[i - 1])) return false;
      return true;
    };
    if (!increasing(axis_x) || !increasing(axis_y))
      throw ConstraintViolation("ObservationRecord: axis values must be strictly increasing");
    std::size_t expect = 0;
    switch (kind) {
      case Kind::series: expect = axis_x.size(); break;
      case Kind::histogram:
        if (axis_x.size() < 2)
          throw ConstraintViolation("ObservationRecord: histogram needs at least one bin");
        expect = axis_x.size() - 1;
        break;
      case Kind::heatmap: expect = axis_x.size() * axis_y.size(); break;
    }
    if (values.size() != expect)
      throw ConstraintViolation("ObservationRecord: value count does not match the axes");
    if (!errors.empty() && errors.size() != values.size())
      throw ConstraintViolation("ObservationRecord: error count does not match the values");
    if (kind == Kind::histogram) {
      double mass = 0.0, err2 = 0.0;
      for (std::size_t b = 0; b + 1 < axis_x.size(); ++b) {
        double dx = axis_x[b + 1] - axis_x[b];
        mass += values[b] * dx;
        if (!errors.empty()) err2 += errors[b] * errors[b] * dx * dx;
      }
      double tol = std::max(1e-6 * std::max(1.0, std::abs(normalization)),
                            3.0 * std::sqrt(err2) + std::abs(clipped));
      if (std::abs(mass - normalization) > tol)
        throw ConstraintViolation("ObservationRecord: histogram mass " + std::to_string(mass) +
                                  " does not match the declared normalization " +
                                  std::to_string(normalization));
    }
  }

  void write(std::ostream& os) const {
    validate();
    const char* kinds[] = {"series", "histogram", "heatmap"};
    os << "# observable: " << observable << "\n# scope: " << scope << "\n# kind: "
       << kinds[static_cast<int>(kind)] << "\n# time: " << format_full(time)
       << "\n# seed: " << seed << "\n";
    char line[160];
    if (kind == Kind::histogram) {
      os << "# normalization: " << format_full(normalization)
         << "\n# clipped: " << format_full(clipped) << "\n# bins: " << values.size()
         << "\n# columns: center[" << unit_x << "] width value[" << unit_v << "] error\n";
      for (std::size_t b = 0; b < values.size(); ++b) {
        std::snprintf(line, sizeof line, "%.12e %.12e %.12e %.12e\n",
                      0.5 * (axis_x[b] + axis_x[b + 1]), axis_x[b + 1] - axis_x[b], values[b],
                      errors.empty() ? 0.0 : errors[b]);
        os << line;
      }
    } else if (kind == Kind::heatmap) {
      os << "# grid: " << axis_x.size() << " x " << axis_y.size() << "\n# columns: x[" << unit_x
         << "] y[" << unit_y << "] value[" << unit_v << "]" << (errors.empty() ? "" : " error")
         << "\n";
      for (std::size_t iy = 0; iy < axis_y.size(); ++iy)
        for (std::size_t ix = 0; ix < axis_x.size(); ++ix) {
          std::size_t c = iy * axis_x.size() + ix;
          if (errors.empty())
            std::snprintf(line, sizeof line, "%.12e %.12e %.12e\n", axis_x[ix], axis_y[iy],
                          values[c]);
          else
            std::snprintf(line, sizeof line, "%.12e %.12e %.12e %.12e\n", axis_x[ix], axis_y[iy],
                          values[c], errors[c]);
          os << line;
        }
    } else {
      os << "# columns: x[" << unit_x << "] value[" << unit_v << "]"
         << (errors.empty() ? "" : " error") << "\n";
      for (std::size_t i = 0; i < values.size(); ++i) {
        if (errors.empty())
          std::snprintf(line, sizeof line, "%.12e %.12e\n", axis_x[i], values[i]);
        else
          std::snprintf(line, sizeof line, "%.12e %.12e %.12e\n", axis_x[i], values[i],
                        errors[i]);
        os << line;
      }
    }
  }
};

// Uniform binning request. With automatic = true the support is detected by
// a short pilot chain and padded; explicit edges come from lo/hi.
struct BinSpec {
  double lo = 0.0;
  double hi = 0.0;
  int count = 200;
  bool automatic = true;
  double padding = 0.01;  // fraction of the detected span added on each side

  void validate() const {
    if (count < 1) throw ConstraintViolation("BinSpec: need at least one bin");
    if (!automatic && !(hi > lo)) throw ConstraintViolation("BinSpec: need hi > lo");
    if (!(padding >= 0.0)) throw ConstraintViolation("BinSpec: padding must be nonnegative");
  }
  std::vector<double> edges() const {
    validate();
    std::vector<double> e(count + 1);
    for (int b = 0; b <= count; ++b) e[b] = lo + (hi - lo) * b / count;
    return e;
  }
};

// ---------------------------------------------------------------------------
// Monte Carlo core

struct McConfig {
  long samples = 1000000;  // retained draws per chain
  long burn_in = 10000;    // tuning draws, discarded
  int chains = 1;
  int batches = 32;  // batch-means blocks per chain
  std::uint64_t seed = 0x243f6a8885a308d3ull;

  void validate() const {
    if (chains < 1) throw ConstraintViolation("McConfig: need at least one chain");
    if (batches < 2) throw ConstraintViolation("McConfig: need at least two batches");
    if (samples < batches)
      throw ConstraintViolation("McConfig: need at least one draw per batch");
    if (burn_in < 0) throw ConstraintViolation("McConfig: burn-in must be nonnegative");
  }
};

// One Metropolis walker. The generator is counter-based: every draw is a hash
// of (seed, stream, counter), so a stored state resumes bit-identically.
struct McSamplerState {
  HyperPoint x{6.0, 0.4, 0.5};
  EulerAngles ang{0.0, 1.5707963267948966, 0.3};
  std::array<double, 5> step{1.0, 0.08, 0.10, 0.25, 0.40};  // rho theta phi beta gamma
  std::uint64_t seed = 0x243f6a8885a308d3ull;
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;
  long proposed = 0;
  long accepted = 0;
  double density = -1.0;  // target at the walker; negative = not yet evaluated

  double acceptance() const {
    return proposed > 0 ? static_cast<double>(accepted) / proposed : 0.0;
  }
};

struct McDiagnostics {
  double acceptance = 0.0;
  double autocorr = 0.0;  // integrated autocorrelation of rho, in draws
  long kept = 0;
};

using ConfigurationDensity = std::function<double(const HyperPoint&, const EulerAngles&)>;
using SampleSink = std::function<void(const HyperPoint&, const EulerAngles&)>;

namespace detail {

inline std::uint64_t counter_rng(std::uint64_t seed, std::uint64_t stream,
                                 std::uint64_t counter) {
  std::uint64_t s = seed + 0x9e3779b97f4a7c15ull * (counter + 1) +
                    (stream ^ 0xbf58476d1ce4e5b9ull) * 0x94d049bb133111ebull;
  return splitmix64(s);
}

inline double unit_open(std::uint64_t v) {
  return static_cast<double>(v >> 11) * 0x1.0p-53 + 0x1.0p-54;
}

inline double wrap_period(double x, double period) {
  x = std::fmod(x, period);
  return x < 0.0 ? x + period : x;
}

}  // namespace detail

// Metropolis chain targeting `density` (an unnormalized nonnegative weight
// that already contains the volume factors). Draws `n` retained samples into
// `sink` after `burn_in` tuning steps. phi and gamma wrap at their periods;
// a proposal outside rho > 0, theta in [0, pi/4], beta in [0, pi] is
// rejected through its zero target weight.
inline McDiagnostics mc_sample(const ConfigurationDensity& density, long n,
                               McSamplerState& state, const SampleSink& sink,
                               long burn_in = 0) {
  if (n < 0 || burn_in < 0)
    throw ConstraintViolation("mc_sample: draw counts must be nonnegative");
  for (double s : state.step)
    if (!(s > 0.0)) throw ConstraintViolation("mc_sample: step scales must be positive");
  const double pi = units::pi;
  if (state.density < 0.0) state.density = density(state.x, state.ang);
  if (!(state.density > 0.0))
    throw ZeroDensityStart("mc_sample: target density vanishes at the starting walker");

  auto draw = [&]() {
    return detail::unit_open(detail::counter_rng(state.seed, state.stream, state.counter++));
  };
  const std::array<double, 5> cap{1e12, pi / 4.0, pi / 3.0, pi, 2.0 * pi};

  long win = 0, win_acc = 0, kept = 0;
  // integrated autocorrelation of rho from 64 fixed blocks
  const int ab = 64;
  const long per = std::max<long>(1, n / ab);
  std::array<double, 64> bsum{};
  double s1 = 0.0, s2 = 0.0;

  for (long it = 0; it < burn_in + n; ++it) {
    HyperPoint xp = state.x;
    EulerAngles ap = state.ang;
    xp.rho += state.step[0] * (2.0 * draw() - 1.0);
    xp.theta += state.step[1] * (2.0 * draw() - 1.0);
    xp.phi = detail::wrap_period(xp.phi + state.step[2] * (2.0 * draw() - 1.0), pi / 3.0);
    ap.beta += state.step[3] * (2.0 * draw() - 1.0);
    ap.gamma = detail::wrap_period(ap.gamma + state.step[4] * (2.0 * draw() - 1.0), 2.0 * pi);
    double dens = 0.0;
    if (xp.rho > 0.0 && xp.theta >= 0.0 && xp.theta <= pi / 4.0 && ap.beta >= 0.0 &&
        ap.beta <= pi)
      dens = density(xp, ap);
    double u = draw();  // always consumed: the stream layout ignores branches
    ++state.proposed;
    ++win;
    if (dens > 0.0 && (dens >= state.density || u < dens / state.density)) {
      state.x = xp;
      state.ang = ap;
      state.density = dens;
      ++state.accepted;
      ++win_acc;
    }
    if (it < burn_in) {
      if (win == 200) {
        double a = win_acc / 200.0;
        double f = a < 0.30 ? 0.8 : (a > 0.50 ? 1.25 : 1.0);
        for (int c = 0; c < 5; ++c)
          state.step[c] = std::min(cap[c], std::max(1e-9, state.step[c] * f));
        win = win_acc = 0;
      }
      continue;
    }
    sink(state.x, state.ang);
    s1 += state.x.rho;
    s2 += state.x.rho * state.x.rho;
    bsum[std::min<long>(kept / per, ab - 1)] += state.x.rho;
    ++kept;
  }

  McDiagnostics d;
  d.acceptance = state.acceptance();
  d.kept = kept;
  if (kept >= 2 * ab) {
    double mean = s1 / kept, var = s2 / kept - mean * mean;
    double bvar = 0.0;
    for (int b = 0; b < ab; ++b) {
      double bm = bsum[b] / per - mean;
      bvar += bm * bm;
    }
    bvar /= ab;
    d.autocorr = var > 0.0 ? std::max(1.0, per * bvar / var) : 1.0;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Pointwise reconstruction of the channel sum

class ChannelWave {
 public:
  ChannelWave(const WavePacket& wp, const ChannelBasis& basis) : wp_(&wp), basis_(&basis) {
    if (!basis.grid().uniform())
      throw ConstraintViolation("channel wave: needs the uniform midpoint theta grid");
    const ChannelSet& cs = wp.channels();
    for (int J : cs.J_values())
      for (int mi = 0; mi < cs.m_count(); ++mi)
        for (int n = 0; n < cs.n_count(); ++n)
          if (!basis.channels().contains({J, -cs.m_max() + 6 * mi, n}))
            throw UnsolvedChannel("channel wave: basis does not cover the packet truncation");
  }

  const WavePacket& packet() const { return *wp_; }
  const ChannelBasis& basis() const { return *basis_; }

  // rho^5 (1/4) sin(4 theta) sin(beta): the sampled-coordinate volume factors
  static double volume_weight(const HyperPoint& pt, const EulerAngles& ang) {
    return std::pow(pt.rho, 5) * 0.25 * std::sin(4.0 * pt.theta) * std::sin(ang.beta);
  }

  std::complex<double> value(const HyperPoint& pt, const EulerAngles& ang) const {
    std::complex<double> acc = 0.0;
    for (int J : wp_->channels().J_values()) acc += value_J(J, pt, ang);
    return acc;
  }

  // the J-component of the channel sum
  std::complex<double> value_J(int J, const HyperPoint& pt, const EulerAngles& ang) const {
    const ChannelSet& cs = wp_->channels();
    const RadialGrid& rg = wp_->grid();
    if (J < 0 || J > cs.J_max() || J % 2 != 0)
      throw EmptyScope("channel wave: no such partial wave in the packet");
    if (pt.rho <= rg.r_min() || pt.rho >= rg.r_max()) return 0.0;

    Stencil rs = stencil(rg.frac_index(pt.rho), rg.size());
    const Eigen::MatrixXcd& blk = wp_->block(J);
    Eigen::VectorXcd F = blk.col(rs.i[0]) * rs.w[0];
    for (int d = 1; d < 4; ++d) F += blk.col(rs.i[d]) * rs.w[d];

    const ThetaGrid& tg = basis_->grid();
    Stencil ts = stencil(pt.theta / (ThetaGrid::quarter_pi() / tg.size()) - 0.5, tg.size());

    std::complex<double> acc = 0.0;
    const std::complex<double> ei6(std::cos(6.0 * pt.phi), std::sin(6.0 * pt.phi));
    std::complex<double> eimp =
        std::exp(std::complex<double>(0.0, -cs.m_max() * pt.phi));
    Eigen::VectorXd dj(J + 1);
    Eigen::VectorXcd eg(J + 1);
    for (int c = 0; c <= J; ++c) {
      int M = -J + 2 * c;
      dj[c] = wigner_d(RotIndex{J, 0, M}, ang.beta);
      eg[c] = std::exp(std::complex<double>(0.0, -M * ang.gamma));
    }
    for (int mi = 0; mi < cs.m_count(); ++mi) {
      int m = -cs.m_max() + 6 * mi;
      std::complex<double> sm = 0.0;
      for (int n = 0; n < cs.n_count(); ++n) {
        std::complex<double> Fmn = F[cs.row_of(m, n)];
        if (Fmn == std::complex<double>(0.0)) continue;
        const Eigen::MatrixXd& P = basis_->pair(J, m, n).P;
        for (int c = 0; c <= J; ++c) {
          double pv = P(c, ts.i[0]) * ts.w[0] + P(c, ts.i[1]) * ts.w[1] +
                      P(c, ts.i[2]) * ts.w[2] + P(c, ts.i[3]) * ts.w[3];
          sm += Fmn * pv * dj[c] * eg[c];
        }
      }
      acc += sm * eimp;
      eimp *= ei6;
    }
    return acc * std::sqrt(3.0 / units::pi) *
           std::sqrt((2.0 * J + 1.0) / (8.0 * units::pi * units::pi));
  }

  double density(const HyperPoint& pt, const EulerAngles& ang) const {
    return std::norm(value(pt, ang)) * volume_weight(pt, ang);
  }
  double density_J(int J, const HyperPoint& pt, const EulerAngles& ang) const {
    return std::norm(value_J(J, pt, ang)) * volume_weight(pt, ang);
  }

 private:
  // 4-point weights reproducing hermite_uniform (Catmull-Rom with one-sided
  // end slopes and clamping) so pointwise values match the interpolating
  // evaluations used elsewhere
  struct Stencil {
    std::array<int, 4> i{0, 0, 0, 0};
    std::array<double, 4> w{0.0, 0.0, 0.0, 0.0};
  };

  static Stencil stencil(double t, int n) {
    Stencil s;
    if (n == 1 || t <= 0.0) {
      s.w[0] = 1.0;
      return s;
    }
    if (t >= n - 1) {
      s.i.fill(n - 1);
      s.w[0] = 1.0;
      return s;
    }
    int i = std::min(static_cast<int>(t), n - 2);
    double u = t - i, u2 = u * u, u3 = u2 * u;
    double h00 = 2 * u3 - 3 * u2 + 1, h10 = u3 - 2 * u2 + u;
    double h01 = -2 * u3 + 3 * u2, h11 = u3 - u2;
    s.i = {std::max(0, i - 1), i, i + 1, std::min(n - 1, i + 2)};
    if (i > 0) {
      s.w[0] += -0.5 * h10;
      s.w[2] += 0.5 * h10;
    } else {  // fm = 2 f0 - f1
      s.w[1] += -h10;
      s.w[2] += h10;
    }
    if (i + 2 < n) {
      s.w[1] += -0.5 * h11;
      s.w[3] += 0.5 * h11;
    } else {  // fp = 2 f_{n-1} - f_{n-2}
      s.w[1] += -h11;
      s.w[2] += h11;
    }
    s.w[1] += h00;
    s.w[2] += h01;
    return s;
  }

  const WavePacket* wp_;
  const ChannelBasis* basis_;
};

// ---------------------------------------------------------------------------
// Bound-state subtraction (the J = 0 scattering portion)

// <psi_b | Psi^(0)> over the common channel rows; grids must match.
inline std::complex<double> bound_amplitude(const WavePacket& wp, const StationaryState& b) {
  if (b.J != 0)
    throw ConstraintViolation("bound_amplitude: reference states must be J = 0");
  if (!b.state.grid().same_as(wp.grid()))
    throw GridMismatch("bound_amplitude: reference grid differs from the packet");
  const ChannelSet& ca = b.state.channels();
  const ChannelSet& cb = wp.channels();
  int m_hi = std::min(ca.m_max(), cb.m_max()), n_hi = std::min(ca.n_max(), cb.n_max());
  const Eigen::VectorXd& meas = wp.measure();
  std::complex<double> acc = 0.0;
  for (int m = -m_hi; m <= m_hi; m += 6)
    for (int n = 0; n <= n_hi; ++n) {
      auto ra = b.state.block(0).row(ca.row_of(m, n));
      auto rb = wp.block(0).row(cb.row_of(m, n));
      for (int k = 0; k < meas.size(); ++k) acc += std::conj(ra[k]) * rb[k] * meas[k];
    }
  return acc;
}

// Packet with the bound components projected out of the J = 0 block; the
// J >= 2 blocks pass through unchanged.
inline WavePacket scattering_part(const WavePacket& wp,
                                  const std::vector<StationaryState>& bound) {
  WavePacket out = wp;
  const ChannelSet& cb = wp.channels();
  for (const auto& b : bound) {
    std::complex<double> c = bound_amplitude(out, b);
    const ChannelSet& ca = b.state.channels();
    int m_hi = std::min(ca.m_max(), cb.m_max()), n_hi = std::min(ca.n_max(), cb.n_max());
    for (int m = -m_hi; m <= m_hi; m += 6)
      for (int n = 0; n <= n_hi; ++n)
        out.block(0).row(cb.row_of(m, n)) -= c * b.state.block(0).row(ca.row_of(m, n));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimator plumbing

struct McEstimate {
  double value = 0.0;
  double error = 0.0;
};

namespace detail {

// batch means of a correlated scalar stream
struct BatchSeries {
  BatchSeries(long total, int nb) : per(std::max<long>(1, total / nb)), nb(nb) {
    sum.assign(nb, 0.0);
    cnt.assign(nb, 0.0);
  }
  void add(double v) {
    long b = std::min<long>(idx++ / per, nb - 1);
    sum[b] += v;
    cnt[b] += 1.0;
  }
  long per;
  int nb;
  long idx = 0;
  std::vector<double> sum, cnt;
};

// pool the batch means of several chains into one estimate
inline McEstimate pool_batches(const std::vector<const BatchSeries*>& parts) {
  double vs = 0.0, vc = 0.0;
  std::vector<double> means;
  for (const BatchSeries* p : parts)
    for (int b = 0; b < p->nb; ++b)
      if (p->cnt[b] > 0.0) {
        means.push_back(p->sum[b] / p->cnt[b]);
        vs += p->sum[b];
        vc += p->cnt[b];
      }
  McEstimate e;
  if (vc <= 0.0) return e;
  e.value = vs / vc;
  if (means.size() >= 2) {
    double var = 0.0;
    for (double m : means) var += (m - e.value) * (m - e.value);
    var /= means.size() - 1;
    e.error = std::sqrt(var / means.size());
  }
  return e;
}

// per-batch weighted bin sums for histogram and conditional-mean estimators
struct HistBatch {
  HistBatch(const std::vector<double>& edges_, long total, int nb_)
      : edges(edges_), per(std::max<long>(1, total / nb_)), nb(nb_) {
    acc = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(edges.size()) - 1, nb);
    cnt.assign(nb, 0.0);
  }
  int bin_of(double x) const {
    double lo = edges.front(), hi = edges.back();
    if (!(x >= lo) || !(x < hi)) return -1;
    int b = static_cast<int>((x - lo) / (hi - lo) * (edges.size() - 1));
    return std::min<int>(b, static_cast<int>(edges.size()) - 2);
  }
  // one retained draw: route its weights to the current batch
  void tick() { batch = std::min<long>(idx++ / per, nb - 1); }
  void add(double x, double w) {
    int b = bin_of(x);
    if (b < 0)
      clipped += std::abs(w);
    else
      acc(b, batch) += w;
    wtot += std::abs(w);
  }
  void count() { cnt[batch] += 1.0; }

  std::vector<double> edges;
  long per;
  int nb;
  long idx = 0;
  long batch = 0;
  Eigen::MatrixXd acc;
  std::vector<double> cnt;
  double clipped = 0.0, wtot = 0.0;
};

// density histogram from pooled batches: value_b = mass_b / (N dx) * scale
inline void hist_density(const std::vector<const HistBatch*>& parts, double scale,
                         std::vector<double>& values, std::vector<double>& errors,
                         double& clipped_mass) {
  const HistBatch& h0 = *parts.front();
  int bins = static_cast<int>(h0.edges.size()) - 1;
  values.assign(bins, 0.0);
  errors.assign(bins, 0.0);
  double total = 0.0, clip = 0.0;
  for (const HistBatch* p : parts) {
    for (double c : p->cnt) total += c;
    clip += p->clipped;
  }
  clipped_mass = total > 0.0 ? clip / total * std::abs(scale) : 0.0;
  if (total <= 0.0) return;
  for (int b = 0; b < bins; ++b) {
    double dx = h0.edges[b + 1] - h0.edges[b];
    std::vector<double> means;
    double msum = 0.0;
    for (const HistBatch* p : parts)
      for (int k = 0; k < p->nb; ++k)
        if (p->cnt[k] > 0.0) {
          means.push_back(p->acc(b, k) / p->cnt[k]);
          msum += p->acc(b, k);
        }
    values[b] = msum / total / dx * scale;
    if (means.size() >= 2) {
      double mean = 0.0;
      for (double m : means) mean += m;
      mean /= means.size();
      double var = 0.0;
      for (double m : means) var += (m - mean) * (m - mean);
      var /= means.size() - 1;
      errors[b] = std::sqrt(var / means.size()) / dx * std::abs(scale);
    }
  }
}

// conditional mean per bin (ratio of pooled numerator and denominator bins)
// with delete-one-batch jackknife errors; empty bins become NaN
inline void hist_ratio(const std::vector<const HistBatch*>& num,
                       const std::vector<const HistBatch*>& den, std::vector<double>& values,
                       std::vector<double>& errors) {
  int bins = static_cast<int>(num.front()->edges.size()) - 1;
  values.assign(bins, std::numeric_limits<double>::quiet_NaN());
  errors.assign(bins, std::numeric_limits<double>::quiet_NaN());
  for (int b = 0; b < bins; ++b) {
    std::vector<double> ns, ds;
    double N = 0.0, D = 0.0;
    for (std::size_t p = 0; p < num.size(); ++p)
      for (int k = 0; k < num[p]->nb; ++k) {
        ns.push_back(num[p]->acc(b, k));
        ds.push_back(den[p]->acc(b, k));
        N += ns.back();
        D += ds.back();
      }
    if (!(D > 0.0)) continue;
    values[b] = N / D;
    double js = 0.0, jn = 0.0;
    std::vector<double> jack;
    for (std::size_t k = 0; k < ns.size(); ++k) {
      if (!(D - ds[k] > 0.0)) continue;
      jack.push_back((N - ns[k]) / (D - ds[k]));
      js += jack.back();
    }
    jn = static_cast<double>(jack.size());
    if (jn >= 2.0) {
      double mean = js / jn, var = 0.0;
      for (double j : jack) var += (j - mean) * (j - mean);
      errors[b] = std::sqrt((jn - 1.0) / jn * var);
    }
  }
}

// deterministic coarse scan for a positive-density starting walker
inline McSamplerState seed_walker(const ConfigurationDensity& density, const WavePacket& wp,
                                  std::uint64_t seed, std::uint64_t stream) {
  const RadialGrid& rg = wp.grid();
  std::vector<std::pair<double, int>> byw;
  for (int k = 0; k < rg.size(); ++k) {
    double q = 0.0;
    for (int J : wp.channels().J_values()) q += wp.block(J).col(k).squaredNorm();
    byw.emplace_back(q * wp.measure()[k], k);
  }
  std::sort(byw.rbegin(), byw.rend());
  const double pi = units::pi;
  McSamplerState st;
  st.seed = seed;
  st.stream = stream;
  double best = -1.0;
  for (int c = 0; c < std::min<int>(4, static_cast<int>(byw.size())); ++c)
    for (double th : {0.12, 0.35, 0.60, pi / 4.0 - 0.02})
      for (double ph : {0.10, 0.52})
        for (double be : {pi / 2.0, pi / 3.0}) {
          HyperPoint pt{rg.nodes()[byw[c].second], th, ph};
          EulerAngles ang{0.0, be, 0.3};
          double d = density(pt, ang);
          if (d > best) {
            best = d;
            st.x = pt;
            st.ang = ang;
            st.density = d;
          }
        }
  if (!(best > 0.0))
    throw ZeroDensityStart("mc sampling: no positive density found in the coarse scan");
  st.step[0] = std::max(0.05 * st.x.rho, 4.0 * (rg.r_max() - rg.r_min()) / rg.size());
  return st;
}

// run cfg.chains independent chains of the same density; `body` is called
// once per chain with the chain index and must install per-chain sinks
template <typename Setup>
inline void run_chains(const ConfigurationDensity& density, const WavePacket& wp,
                       const McConfig& cfg, std::uint64_t stream_base, const Setup& body) {
  cfg.validate();
  parallel_for(cfg.chains, [&](long c) {
    McSamplerState st = seed_walker(density, wp, cfg.seed, stream_base + c);
    SampleSink sink = body(static_cast<int>(c));
    mc_sample(density, cfg.samples, st, sink, cfg.burn_in);
  });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Expectation values

using AngularFunctional = std::function<double(const HyperPoint&, const EulerAngles&)>;

namespace detail {

inline McEstimate expval_density(const ConfigurationDensity& density, const WavePacket& wp,
                                 const AngularFunctional& A, const McConfig& cfg,
                                 std::uint64_t stream_base) {
  std::vector<BatchSeries> acc(cfg.chains, BatchSeries(cfg.samples, cfg.batches));
  run_chains(density, wp, cfg, stream_base, [&](int c) -> SampleSink {
    BatchSeries* mine = &acc[c];
    return [mine, &A](const HyperPoint& pt, const EulerAngles& ang) { mine->add(A(pt, ang)); };
  });
  std::vector<const BatchSeries*> parts;
  for (const auto& a : acc) parts.push_back(&a);
  return pool_batches(parts);
}

}  // namespace detail

// <A> over the full packet
inline McEstimate expval(const WavePacket& wp, const ChannelBasis& basis,
                         const AngularFunctional& A, const McConfig& cfg = {}) {
  if (!(wp.norm2() > 0.0)) throw EmptyScope("expval: packet has zero norm");
  ChannelWave cw(wp, basis);
  return detail::expval_density(
      [&cw](const HyperPoint& p, const EulerAngles& a) { return cw.density(p, a); }, wp, A,
      cfg, 0);
}

// <A> over one partial wave
inline McEstimate expval_J(const WavePacket& wp, const ChannelBasis& basis, int J,
                           const AngularFunctional& A, const McConfig& cfg = {}) {
  if (J < 0 || J > wp.channels().J_max() || J % 2 != 0)
    throw EmptyScope("expval: no such partial wave in the packet");
  if (!(wp.norm2_J(J) > 0.0)) throw EmptyScope("expval: partial wave has zero norm");
  ChannelWave cw(wp, basis);
  return detail::expval_density(
      [&cw, J](const HyperPoint& p, const EulerAngles& a) { return cw.density_J(J, p, a); },
      wp, A, cfg, 100);
}

// <A> over the J = 0 scattering portion (bound references projected out)
inline McEstimate expval_scatt(const WavePacket& wp, const ChannelBasis& basis,
                               const std::vector<StationaryState>& bound,
                               const AngularFunctional& A, const McConfig& cfg = {}) {
  WavePacket s = scattering_part(wp, bound);
  if (!(s.norm2_J(0) > 0.0)) throw EmptyScope("expval: scattering portion has zero norm");
  ChannelWave cw(s, basis);
  return detail::expval_density(
      [&cw](const HyperPoint& p, const EulerAngles& a) { return cw.density_J(0, p, a); }, s,
      A, cfg, 200);
}

// ---------------------------------------------------------------------------
// Shape functionals

inline std::array<double, 3> pair_distances(const HyperPoint& pt) {
  auto g = distance_ratios(pt.theta, pt.phi);
  return {pt.rho * g[0], pt.rho * g[1], pt.rho * g[2]};
}

// sum of inverse pair separations (hartree when distances are in bohr)
inline double ker_energy(const HyperPoint& pt) {
  auto d = pair_distances(pt);
  return 1.0 / d[0] + 1.0 / d[1] + 1.0 / d[2];
}

struct PairCorrelators {
  McEstimate r_min, r_ave, r_max;
};

// mean smallest / average / largest pair separation, from one sample stream
inline PairCorrelators pair_correlators(const WavePacket& wp, const ChannelBasis& basis,
                                        const McConfig& cfg = {}) {
  if (!(wp.norm2() > 0.0)) throw EmptyScope("pair_correlators: packet has zero norm");
  ChannelWave cw(wp, basis);
  using BS = detail::BatchSeries;
  std::vector<std::array<BS, 3>> acc(
      cfg.chains, {BS(cfg.samples, cfg.batches), BS(cfg.samples, cfg.batches),
                   BS(cfg.samples, cfg.batches)});
  detail::run_chains(
      [&cw](const HyperPoint& p, const EulerAngles& a) { return cw.density(p, a); }, wp, cfg,
      300, [&](int c) -> SampleSink {
        std::array<BS, 3>* mine = &acc[c];
        return [mine](const HyperPoint& pt, const EulerAngles&) {
          auto d = pair_distances(pt);
          (*mine)[0].add(std::min({d[0], d[1], d[2]}));
          (*mine)[1].add((d[0] + d[1] + d[2]) / 3.0);
          (*mine)[2].add(std::max({d[0], d[1], d[2]}));
        };
      });
  PairCorrelators out;
  McEstimate* slots[3] = {&out.r_min, &out.r_ave, &out.r_max};
  for (int q = 0; q < 3; ++q) {
    std::vector<const BS*> parts;
    for (const auto& a : acc) parts.push_back(&a[q]);
    *slots[q] = detail::pool_batches(parts);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kinetic energy release

struct KerSplit {
  ObservationRecord total;               // normalized to the packet norm (1)
  ObservationRecord bound;               // sum_b |c_b|^2 P_b
  ObservationRecord scatt;               // J = 0 with the bound part removed
  std::vector<ObservationRecord> per_J;  // J = 2, 4, ...
  ObservationRecord cross;               // signed bound x scattering interference
  std::vector<std::complex<double>> amplitudes;  // <psi_b|Psi> per reference
};

namespace detail {

// short pilot chain for automatic support detection
template <typename Value>
inline std::pair<double, double> pilot_range(const ConfigurationDensity& density,
                                             const WavePacket& wp, const McConfig& cfg,
                                             std::uint64_t stream, const Value& value_of) {
  McSamplerState st = seed_walker(density, wp, cfg.seed, stream);
  double lo = std::numeric_limits<double>::max(), hi = -lo;
  long n = std::max<long>(4000, cfg.samples / 50);
  mc_sample(
      density, n, st,
      [&](const HyperPoint& pt, const EulerAngles& ang) {
        double v = value_of(pt, ang);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      },
      cfg.burn_in);
  return {lo, hi};
}

inline std::vector<double> resolve_edges(const BinSpec& bins, double lo, double hi,
                                         bool clamp_nonneg) {
  BinSpec b = bins;
  if (b.automatic) {
    double span = std::max(hi - lo, 1e-12 * std::max(1.0, std::abs(hi)));
    b.lo = lo - b.padding * span;
    b.hi = hi + b.padding * span;
    if (clamp_nonneg) b.lo = std::max(0.0, b.lo);
    b.automatic = false;
  }
  return b.edges();
}

inline ObservationRecord hist_record(const std::string& name, const std::string& scope,
                                     const WavePacket& wp, const McConfig& cfg,
                                     const std::vector<double>& edges,
                                     const std::vector<const HistBatch*>& parts, double scale,
                                     double normalization) {
  ObservationRecord rec;
  rec.kind = ObservationRecord::Kind::histogram;
  rec.observable = name;
  rec.scope = scope;
  rec.time = wp.time();
  rec.seed = cfg.seed;
  rec.unit_x = "hartree";
  rec.unit_v = "1/hartree";
  rec.axis_x = edges;
  rec.normalization = normalization;
  hist_density(parts, scale, rec.values, rec.errors, rec.clipped);
  return rec;
}

}  // namespace detail

// P(KER) of the packet plus its partial-wave split. The bound references are
// projected out of the J = 0 block to define the scattering portion; the
// remaining J = 0 interference is binned with signed weights into `cross`,
// so the pieces add up to the total by construction.
inline KerSplit ker_distribution(const WavePacket& wp, const ChannelBasis& basis,
                                 const std::vector<StationaryState>& bound,
                                 const BinSpec& bins = {}, const McConfig& cfg = {}) {
  cfg.validate();
  bins.validate();
  if (!(wp.norm2() > 0.0)) throw EmptyScope("ker_distribution: packet has zero norm");
  ChannelWave full(wp, basis);
  WavePacket spart = scattering_part(wp, bound);
  ChannelWave scw(spart, basis);
  std::vector<ChannelWave> bcw;
  bcw.reserve(bound.size());
  KerSplit out;
  for (const auto& b : bound) {
    out.amplitudes.push_back(bound_amplitude(wp, b));
    bcw.emplace_back(b.state, basis);
  }

  auto ker_of = [](const HyperPoint& pt, const EulerAngles&) { return ker_energy(pt); };
  std::vector<double> edges;
  if (bins.automatic) {
    auto [lo, hi] = detail::pilot_range(
        [&full](const HyperPoint& p, const EulerAngles& a) { return full.density(p, a); }, wp,
        cfg, 7000, ker_of);
    edges = detail::resolve_edges(bins, lo, hi, true);
  } else {
    edges = bins.edges();
  }

  double norm_all = wp.norm2();
  // piece list: 0 = total, 1 = scatt, 2 = cross, 3.. = bound refs, then per J >= 2
  struct Piece {
    std::string name, scope;
    ConfigurationDensity density;
    std::function<double(const HyperPoint&, const EulerAngles&)> weight;  // bin weight
    double scale = 1.0;       // histogram mass
    const WavePacket* home;   // packet whose grid seeds the walker
  };
  std::vector<Piece> pieces;
  pieces.push_back({"kinetic energy release", "full",
                    [&full](const HyperPoint& p, const EulerAngles& a) {
                      return full.density(p, a);
                    },
                    nullptr, 1.0, &wp});
  double s_norm = spart.norm2_J(0);
  if (s_norm > 0.0)
    pieces.push_back({"kinetic energy release", "scattering",
                      [&scw](const HyperPoint& p, const EulerAngles& a) {
                        return scw.density_J(0, p, a);
                      },
                      nullptr, s_norm / norm_all, &spart});
  double bound_mass = 0.0;
  for (std::size_t b = 0; b < bound.size(); ++b) {
    double w = std::norm(out.amplitudes[b]) / norm_all;
    bound_mass += w;
    const WavePacket* st = &bound[b].state;
    const ChannelWave* cw = &bcw[b];
    pieces.push_back({"kinetic energy release", "bound " + std::to_string(b),
                      [cw](const HyperPoint& p, const EulerAngles& a) {
                        return cw->density_J(0, p, a);
                      },
                      nullptr, w / st->norm2(), st});
  }
  // signed interference: everything in |Psi^(0)|^2 beyond the named pieces
  if (!bound.empty() && s_norm > 0.0) {
    auto& amps = out.amplitudes;
    auto weight = [&full, &scw, &bcw, &amps](const HyperPoint& p, const EulerAngles& a) {
      std::complex<double> v0 = full.value_J(0, p, a);
      double d0 = std::norm(v0);
      if (!(d0 > 0.0)) return 0.0;
      double rest = std::norm(scw.value_J(0, p, a));
      for (std::size_t b = 0; b < bcw.size(); ++b)
        rest += std::norm(amps[b] * bcw[b].value_J(0, p, a));
      return (d0 - rest) / d0;
    };
    pieces.push_back({"kinetic energy release", "interference",
                      [&full](const HyperPoint& p, const EulerAngles& a) {
                        return full.density_J(0, p, a);
                      },
                      weight, wp.norm2_J(0) / norm_all, &wp});
  }
  int first_J = static_cast<int>(pieces.size());
  for (int J = 2; J <= wp.channels().J_max(); J += 2) {
    double w = wp.norm2_J(J) / norm_all;
    if (!(w > 0.0)) continue;
    pieces.push_back({"kinetic energy release", "J=" + std::to_string(J),
                      [&full, J](const HyperPoint& p, const EulerAngles& a) {
                        return full.density_J(J, p, a);
                      },
                      nullptr, w, &wp});
  }

  std::vector<std::vector<detail::HistBatch>> hb(pieces.size());
  for (std::size_t p = 0; p < pieces.size(); ++p) {
    hb[p].assign(cfg.chains, detail::HistBatch(edges, cfg.samples, cfg.batches));
    const Piece& pc = pieces[p];
    detail::run_chains(pc.density, *pc.home, cfg, 1000 * (p + 1), [&](int c) -> SampleSink {
      detail::HistBatch* mine = &hb[p][c];
      const Piece* pp = &pc;
      return [mine, pp](const HyperPoint& pt, const EulerAngles& ang) {
        mine->tick();
        mine->count();
        mine->add(ker_energy(pt), pp->weight ? pp->weight(pt, ang) : 1.0);
      };
    });
  }

  auto parts_of = [&](std::size_t p) {
    std::vector<const detail::HistBatch*> parts;
    for (const auto& h : hb[p]) parts.push_back(&h);
    return parts;
  };

  std::size_t p = 0;
  out.total = detail::hist_record("kinetic energy release", "full", wp, cfg, edges,
                                  parts_of(p), pieces[p].scale, 1.0);
  if (out.total.clipped > 1e-4)
    throw BinningClipped("ker_distribution: " + std::to_string(out.total.clipped) +
                         " of the probability mass fell outside the bins");
  ++p;
  if (s_norm > 0.0) {
    out.scatt = detail::hist_record("kinetic energy release", "scattering", spart, cfg, edges,
                                    parts_of(p), pieces[p].scale, pieces[p].scale);
    ++p;
  }
  {  // bound records accumulate into one piece
    out.bound.kind = ObservationRecord::Kind::histogram;
    out.bound = detail::hist_record("kinetic energy release", "bound", wp, cfg, edges, {},
                                    0.0, bound_mass);
    out.bound.values.assign(edges.size() - 1, 0.0);
    out.bound.errors.assign(edges.size() - 1, 0.0);
    for (std::size_t b = 0; b < bound.size(); ++b, ++p) {
      ObservationRecord rb = detail::hist_record("kinetic energy release", pieces[p].scope,
                                                 bound[b].state, cfg, edges, parts_of(p),
                                                 pieces[p].scale, pieces[p].scale);
      for (std::size_t i = 0; i < rb.values.size(); ++i) {
        out.bound.values[i] += rb.values[i];
        out.bound.errors[i] = std::hypot(out.bound.errors[i], rb.errors[i]);
        out.bound.clipped += rb.clipped;
      }
    }
  }
  if (!bound.empty() && s_norm > 0.0) {
    double expect = (wp.norm2_J(0) - spart.norm2_J(0)) / norm_all - bound_mass;
    out.cross = detail::hist_record("kinetic energy release", "interference", wp, cfg, edges,
                                    parts_of(p), pieces[p].scale, expect);
    ++p;
  } else {
    out.cross = detail::hist_record("kinetic energy release", "interference", wp, cfg, edges,
                                    {}, 0.0, 0.0);
    out.cross.values.assign(edges.size() - 1, 0.0);
    out.cross.errors.assign(edges.size() - 1, 0.0);
  }
  for (std::size_t q = first_J; q < pieces.size(); ++q, ++p)
    out.per_J.push_back(detail::hist_record("kinetic energy release", pieces[q].scope, wp,
                                            cfg, edges, parts_of(p), pieces[q].scale,
                                            pieces[q].scale));
  return out;
}

// ---------------------------------------------------------------------------
// Deterministic rho-resolved profiles

// Per-(J',J,m) operator blocks of a bounded orientation functional f(beta,
// gamma): quadrature over the Euler angles and the discrete theta rule turns
// the rho-resolved expectation value into a channel-coefficient contraction.
class AngularTable {
 public:
  static AngularTable build(const ChannelBasis& basis,
                            const std::function<double(double, double)>& f,
                            int beta_points = 64, int gamma_points = 64) {
    if (beta_points < 8 || gamma_points < 8)
      throw ConstraintViolation("AngularTable: need at least 8 quadrature points per angle");
    AngularTable t;
    t.channels_ = basis.channels();
    const ChannelSet& cs = t.channels_;
    const double pi = units::pi;
    QuadratureRule gl = gauss_legendre(beta_points);

    // gamma Fourier coefficients of f on each beta node: harmonics up to the
    // largest |M' - M| = 2 J_max
    int hmax = 2 * cs.J_max();
    Eigen::MatrixXcd fg(hmax + 1, beta_points);  // only h >= 0; f real
    for (int b = 0; b < beta_points; ++b) {
      double beta = std::acos(gl.x[b]);
      for (int h = 0; h <= hmax; ++h) {
        std::complex<double> acc = 0.0;
        for (int g = 0; g < gamma_points; ++g) {
          double gamma = (g + 0.5) * 2.0 * pi / gamma_points;
          acc += std::polar(1.0, h * gamma) * f(beta, gamma);
        }
        fg(h, b) = acc * (2.0 * pi / gamma_points);
      }
    }

    int nJ = cs.J_count(), nn = cs.n_count(), dim = nJ * nn;
    t.blocks_.assign(cs.m_count(), Eigen::MatrixXcd::Zero(dim, dim));
    const auto& cw = basis.grid().cell_weights();
    for (int mi = 0; mi < cs.m_count(); ++mi) {
      int m = -cs.m_max() + 6 * mi;
      for (int ja = 0; ja < nJ; ++ja)
        for (int jb = 0; jb < nJ; ++jb) {
          int Ja = 2 * ja, Jb = 2 * jb;
          double pref = std::sqrt((2.0 * Ja + 1.0) * (2.0 * Jb + 1.0)) /
                        (8.0 * pi * pi) * 2.0 * pi;
          for (int ca = 0; ca <= Ja; ++ca)
            for (int cb = 0; cb <= Jb; ++cb) {
              int Ma = -Ja + 2 * ca, Mb = -Jb + 2 * cb;
              int h = Ma - Mb;
              std::complex<double> euler = 0.0;
              for (int b = 0; b < beta_points; ++b) {
                double beta = std::acos(gl.x[b]);
                std::complex<double> fv =
                    h >= 0 ? fg(h, b) : std::conj(fg(-h, b));
                euler += gl.w[b] * wigner_d(RotIndex{Ja, 0, Ma}, beta) *
                         wigner_d(RotIndex{Jb, 0, Mb}, beta) * fv;
              }
              euler *= pref;
              if (std::abs(euler) < 1e-300) continue;
              for (int na = 0; na < nn; ++na)
                for (int nb = 0; nb < nn; ++nb) {
                  const Eigen::MatrixXd& Pa = basis.pair(Ja, m, na).P;
                  const Eigen::MatrixXd& Pb = basis.pair(Jb, m, nb).P;
                  double ov = 0.0;
                  for (int i = 0; i < basis.grid().size(); ++i)
                    ov += Pa(ca, i) * Pb(cb, i) * cw[i];
                  t.blocks_[mi](ja * nn + na, jb * nn + nb) += euler * ov;
                }
            }
        }
    }
    return t;
  }

  const ChannelSet& channels() const { return channels_; }

  // <f>(rho_k); NaN where the packet carries no weight at that node
  double at(const WavePacket& wp, int k) const {
    require(wp);
    const ChannelSet& cs = wp.channels();
    int nn = cs.n_count();
    std::complex<double> num = 0.0;
    double den = 0.0;
    for (int mi = 0; mi < cs.m_count(); ++mi) {
      int m = -cs.m_max() + 6 * mi;
      Eigen::VectorXcd fv(cs.J_count() * nn);
      for (int j = 0; j < cs.J_count(); ++j)
        for (int n = 0; n < nn; ++n) fv[j * nn + n] = wp.block(2 * j)(cs.row_of(m, n), k);
      den += fv.squaredNorm();
      num += fv.dot(blocks_[mi] * fv);  // dot conjugates the left factor
    }
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return std::real(num) / den;
  }

  Eigen::VectorXd profile(const WavePacket& wp) const {
    require(wp);
    Eigen::VectorXd out(wp.grid().size());
    for (int k = 0; k < wp.grid().size(); ++k) out[k] = at(wp, k);
    return out;
  }

 private:
  void require(const WavePacket& wp) const {
    if (!(wp.channels() == channels_))
      throw GridMismatch("AngularTable: packet channels differ from the table");
  }
  ChannelSet channels_{0, 0, 0};
  std::vector<Eigen::MatrixXcd> blocks_;  // per m: (J n) x (J n)
};

enum class AlignmentAxis { plane_normal, in_plane };  // cos^2 beta / cos^2 gamma

inline ObservationRecord alignment_rho(const std::vector<WavePacket>& trajectory,
                                       const ChannelBasis& basis, AlignmentAxis axis,
                                       int beta_points = 64, int gamma_points = 64) {
  if (trajectory.empty())
    throw ConstraintViolation("alignment_rho: empty trajectory");
  auto f = axis == AlignmentAxis::plane_normal
               ? std::function<double(double, double)>(
                     [](double beta, double) { return std::cos(beta) * std::cos(beta); })
               : std::function<double(double, double)>(
                     [](double, double gamma) { return std::cos(gamma) * std::cos(gamma); });
  AngularTable table = AngularTable::build(basis, f, beta_points, gamma_points);
  const RadialGrid& rg = trajectory.front().grid();
  ObservationRecord rec;
  rec.kind = ObservationRecord::Kind::heatmap;
  rec.observable = axis == AlignmentAxis::plane_normal ? "alignment cos^2(beta)"
                                                       : "alignment cos^2(gamma)";
  rec.scope = "full";
  rec.unit_x = "bohr";
  rec.unit_y = "atomic time";
  rec.unit_v = "";
  rec.axis_x.assign(rg.nodes().begin(), rg.nodes().end());
  for (const auto& wp : trajectory) rec.axis_y.push_back(wp.time());
  rec.values.resize(rec.axis_x.size() * rec.axis_y.size());
  for (std::size_t iy = 0; iy < trajectory.size(); ++iy) {
    if (!trajectory[iy].grid().same_as(rg))
      throw GridMismatch("alignment_rho: trajectory grids differ");
    Eigen::VectorXd prof = table.profile(trajectory[iy]);
    for (int k = 0; k < prof.size(); ++k) rec.values[iy * rec.axis_x.size() + k] = prof[k];
  }
  rec.validate();
  return rec;
}

// ---------------------------------------------------------------------------
// Channel interference expansion of the alignment signal

struct InterferenceTerm {
  ChannelIndex a, b;
  Eigen::VectorXd deviation;  // contribution to <cos^2 beta> - 1/3 per node
};

struct InterferenceProfile {
  Eigen::VectorXd value;   // 1/3 + sum of deviations; NaN without weight
  Eigen::VectorXd weight;  // subset norm density per node
  std::vector<InterferenceTerm> terms;
};

inline InterferenceProfile alignment_interference_profile(
    const WavePacket& wp, const ChannelBasis& basis, const std::vector<ChannelIndex>& subset) {
  if (subset.empty())
    throw ConstraintViolation("alignment_interference: empty channel subset");
  for (const auto& c : subset) {
    c.validate();
    if (!basis.channels().contains(c) || !wp.channels().contains(c))
      throw MissingCoupling("alignment_interference: channel (" + std::to_string(c.J) + "," +
                            std::to_string(c.m) + "," + std::to_string(c.n) +
                            ") outside the solved set");
  }
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = i + 1; j < subset.size(); ++j)
      if (subset[i].J == subset[j].J && subset[i].m == subset[j].m &&
          subset[i].n == subset[j].n)
        throw ConstraintViolation("alignment_interference: duplicate channel in the subset");

  int nk = wp.grid().size();
  InterferenceProfile out;
  out.weight = Eigen::VectorXd::Zero(nk);
  for (const auto& c : subset) {
    auto row = wp.block(c.J).row(wp.channels().row_of(c.m, c.n));
    for (int k = 0; k < nk; ++k) out.weight[k] += std::norm(row[k]);
  }
  for (std::size_t i = 0; i < subset.size(); ++i)
    for (std::size_t j = i; j < subset.size(); ++j) {
      const ChannelIndex &a = subset[i], &b = subset[j];
      if (a.m != b.m || std::abs(a.J - b.J) > 2) continue;
      double G = basis.coupling_G(a.J, b.J, a.m, a.n, b.n);
      if (G == 0.0) continue;
      double mult = (i == j) ? 1.0 : 2.0;
      InterferenceTerm term{a, b, Eigen::VectorXd::Zero(nk)};
      auto ra = wp.block(a.J).row(wp.channels().row_of(a.m, a.n));
      auto rb = wp.block(b.J).row(wp.channels().row_of(b.m, b.n));
      for (int k = 0; k < nk; ++k)
        term.deviation[k] =
            out.weight[k] > 0.0
                ? (2.0 / 3.0) * mult * G * std::real(std::conj(ra[k]) * rb[k]) /
                      out.weight[k]
                : std::numeric_limits<double>::quiet_NaN();
      out.terms.push_back(std::move(term));
    }
  out.value = Eigen::VectorXd::Constant(nk, 1.0 / 3.0);
  for (int k = 0; k < nk; ++k) {
    if (!(out.weight[k] > 0.0)) {
      out.value[k] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    for (const auto& t : out.terms) out.value[k] += t.deviation[k];
  }
  return out;
}

struct InterferenceMap {
  ObservationRecord map;                  // <cos^2 beta>(rho, t) from the expansion
  std::vector<ObservationRecord> terms;   // one heatmap per interference term
};

inline InterferenceMap alignment_interference(const std::vector<WavePacket>& trajectory,
                                              const ChannelBasis& basis,
                                              const std::vector<ChannelIndex>& subset) {
  if (trajectory.empty())
    throw ConstraintViolation("alignment_interference: empty trajectory");
  const RadialGrid& rg = trajectory.front().grid();
  auto blank = [&](const std::string& name) {
    ObservationRecord rec;
    rec.kind = ObservationRecord::Kind::heatmap;
    rec.observable = name;
    rec.scope = "channels:" + std::to_string(subset.size());
    rec.unit_x = "bohr";
    rec.unit_y = "atomic time";
    rec.axis_x.assign(rg.nodes().begin(), rg.nodes().end());
    for (const auto& wp : trajectory) rec.axis_y.push_back(wp.time());
    rec.values.resize(rec.axis_x.size() * rec.axis_y.size());
    return rec;
  };
  InterferenceMap out;
  out.map = blank("alignment interference");
  std::vector<InterferenceProfile> profiles;
  for (const auto& wp : trajectory)
    profiles.push_back(alignment_interference_profile(wp, basis, subset));
  for (std::size_t t = 0; t < profiles.front().terms.size(); ++t) {
    const auto& la = profiles.front().terms[t].a;
    const auto& lb = profiles.front().terms[t].b;
    out.terms.push_back(blank("alignment term (" + std::to_string(la.J) + "," +
                              std::to_string(la.m) + "," + std::to_string(la.n) + ")x(" +
                              std::to_string(lb.J) + "," + std::to_string(lb.m) + "," +
                              std::to_string(lb.n) + ")"));
  }
  for (std::size_t iy = 0; iy < profiles.size(); ++iy) {
    for (int k = 0; k < rg.size(); ++k)
      out.map.values[iy * rg.size() + k] = profiles[iy].value[k];
    for (std::size_t t = 0; t < out.terms.size(); ++t)
      for (int k = 0; k < rg.size(); ++k)
        out.terms[t].values[iy * rg.size() + k] = profiles[iy].terms[t].deviation[k];
  }
  out.map.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Distance-resolved alignment

enum class PairChoice { average, closest, farthest };

// <cos^2 theta_pair>(r, t): conditional mean of the bond alignment at pair
// separation r, one chain set per checkpoint. Empty bins are NaN.
inline ObservationRecord alignment_r(const std::vector<WavePacket>& trajectory,
                                     const ChannelBasis& basis, PairChoice which,
                                     const BinSpec& bins = {}, const McConfig& cfg = {}) {
  cfg.validate();
  bins.validate();
  if (trajectory.empty()) throw ConstraintViolation("alignment_r: empty trajectory");

  auto select = [which](const std::array<double, 3>& d) {
    if (which == PairChoice::closest)
      return static_cast<int>(std::min_element(d.begin(), d.end()) - d.begin());
    return static_cast<int>(std::max_element(d.begin(), d.end()) - d.begin());
  };

  std::vector<double> edges;
  if (bins.automatic) {
    double lo = std::numeric_limits<double>::max(), hi = -lo;
    for (const WavePacket* wp : {&trajectory.front(), &trajectory.back()}) {
      ChannelWave cw(*wp, basis);
      auto [l, h] = detail::pilot_range(
          [&cw](const HyperPoint& p, const EulerAngles& a) { return cw.density(p, a); }, *wp,
          cfg, 7100,
          [&](const HyperPoint& pt, const EulerAngles&) {
            auto d = pair_distances(pt);
            if (which == PairChoice::average) return (d[0] + d[1] + d[2]) / 3.0;
            return d[select(d)];
          });
      lo = std::min(lo, l);
      hi = std::max(hi, h);
    }
    edges = detail::resolve_edges(bins, lo, hi, true);
  } else {
    edges = bins.edges();
  }

  ObservationRecord rec;
  rec.kind = ObservationRecord::Kind::heatmap;
  rec.observable = which == PairChoice::average
                       ? "pair alignment (average)"
                       : (which == PairChoice::closest ? "pair alignment (closest)"
                                                       : "pair alignment (farthest)");
  rec.scope = "full";
  rec.seed = cfg.seed;
  rec.unit_x = "bohr";
  rec.unit_y = "atomic time";
  for (std::size_t b = 0; b + 1 < edges.size(); ++b)
    rec.axis_x.push_back(0.5 * (edges[b] + edges[b + 1]));
  for (const auto& wp : trajectory) rec.axis_y.push_back(wp.time());
  rec.values.assign(rec.axis_x.size() * rec.axis_y.size(),
                    std::numeric_limits<double>::quiet_NaN());
  rec.errors = rec.values;

  for (std::size_t iy = 0; iy < trajectory.size(); ++iy) {
    const WavePacket& wp = trajectory[iy];
    ChannelWave cw(wp, basis);
    std::vector<detail::HistBatch> num(cfg.chains,
                                       detail::HistBatch(edges, cfg.samples, cfg.batches));
    std::vector<detail::HistBatch> den = num;
    detail::run_chains(
        [&cw](const HyperPoint& p, const EulerAngles& a) { return cw.density(p, a); }, wp,
        cfg, 7200 + 10 * iy, [&](int c) -> SampleSink {
          detail::HistBatch* hn = &num[c];
          detail::HistBatch* hd = &den[c];
          return [hn, hd, which, &select](const HyperPoint& pt, const EulerAngles& ang) {
            auto d = pair_distances(pt);
            auto ct = lab_angles(pt, ang);
            hn->tick();
            hd->tick();
            if (which == PairChoice::average) {
              for (int c2 = 0; c2 < 3; ++c2) {
                hn->add(d[c2], ct[c2] * ct[c2]);
                hd->add(d[c2], 1.0);
              }
            } else {
              int c2 = select(d);
              hn->add(d[c2], ct[c2] * ct[c2]);
              hd->add(d[c2], 1.0);
            }
          };
        });
    std::vector<const detail::HistBatch*> pn, pd;
    for (const auto& h : num) pn.push_back(&h);
    for (const auto& h : den) pd.push_back(&h);
    std::vector<double> v, e;
    detail::hist_ratio(pn, pd, v, e);
    for (std::size_t k = 0; k < v.size(); ++k) {
      rec.values[iy * rec.axis_x.size() + k] = v[k];
      rec.errors[iy * rec.axis_x.size() + k] = e[k];
    }
  }
  rec.validate();
  return rec;
}

// ---------------------------------------------------------------------------
// Principal-frame snapshot

// 2D density of the atom positions in the sorted-moments inertia frame,
// peak-normalized and capped at 1. Orientation never enters: the frame is a
// pure shape construction, so the map is invariant under global rotations.
inline ObservationRecord frame_snapshot(const WavePacket& wp, const ChannelBasis& basis,
                                        const BinSpec& bins = {}, const McConfig& cfg = {}) {
  cfg.validate();
  bins.validate();
  if (!(wp.norm2() > 0.0)) throw EmptyScope("frame_snapshot: packet has zero norm");
  ChannelWave cw(wp, basis);
  ConfigurationDensity dens = [&cw](const HyperPoint& p, const EulerAngles& a) {
    return cw.density(p, a);
  };

  std::vector<double> edges;
  if (bins.automatic) {
    auto [lo, hi] = detail::pilot_range(dens, wp, cfg, 7300,
                                        [](const HyperPoint& pt, const EulerAngles&) {
                                          auto f = principal_frame(to_distances(pt));
                                          double m = 0.0;
                                          for (const auto& v : f.positions)
                                            m = std::max(
                                                m, std::max(std::abs(v[0]), std::abs(v[1])));
                                          return m;
                                        });
    (void)lo;
    BinSpec b = bins;
    b.hi = hi * (1.0 + bins.padding);
    b.lo = -b.hi;
    b.automatic = false;
    edges = b.edges();
  } else {
    edges = bins.edges();
  }

  int nb = static_cast<int>(edges.size()) - 1;
  std::vector<Eigen::MatrixXd> maps(cfg.chains, Eigen::MatrixXd::Zero(nb, nb));
  detail::HistBatch locator(edges, 1, 1);  // reuse the bin arithmetic
  detail::run_chains(dens, wp, cfg, 7400, [&](int c) -> SampleSink {
    Eigen::MatrixXd* mine = &maps[c];
    return [mine, &locator](const HyperPoint& pt, const EulerAngles&) {
      auto f = principal_frame(to_distances(pt));
      for (const auto& v : f.positions) {
        int bx = locator.bin_of(v[0]), by = locator.bin_of(v[1]);
        if (bx >= 0 && by >= 0) (*mine)(bx, by) += 1.0;
      }
    };
  });
  Eigen::MatrixXd map = Eigen::MatrixXd::Zero(nb, nb);
  for (const auto& m : maps) map += m;
  double peak = map.maxCoeff();

  ObservationRecord rec;
  rec.kind = ObservationRecord::Kind::heatmap;
  rec.observable = "principal-frame density";
  rec.scope = "full";
  rec.time = wp.time();
  rec.seed = cfg.seed;
  rec.unit_x = "bohr";
  rec.unit_y = "bohr";
  for (int b = 0; b < nb; ++b) rec.axis_x.push_back(0.5 * (edges[b] + edges[b + 1]));
  rec.axis_y = rec.axis_x;
  rec.values.resize(static_cast<std::size_t>(nb) * nb);
  for (int iy = 0; iy < nb; ++iy)
    for (int ix = 0; ix < nb; ++ix)
      rec.values[static_cast<std::size_t>(iy) * nb + ix] =
          peak > 0.0 ? std::min(1.0, map(ix, iy) / peak) : 0.0;
  rec.validate();
  return rec;
}

// ---------------------------------------------------------------------------
// Scalar series over a trajectory

inline ObservationRecord expval_series(const std::vector<WavePacket>& trajectory,
                                       const ChannelBasis& basis, const std::string& name,
                                       const AngularFunctional& A, const McConfig& cfg = {}) {
  if (trajectory.empty()) throw ConstraintViolation("expval_series: empty trajectory");
  ObservationRecord rec;
  rec.kind = ObservationRecord::Kind::series;
  rec.observable = name;
  rec.scope = "full";
  rec.seed = cfg.seed;
  rec.unit_x = "atomic time";
  for (const auto& wp : trajectory) {
    McEstimate e = expval(wp, basis, A, cfg);
    rec.axis_x.push_back(wp.time());
    rec.values.push_back(e.value);
    rec.errors.push_back(e.error);
  }
  rec.validate();
  return rec;
}

}  // namespace hyperkick
