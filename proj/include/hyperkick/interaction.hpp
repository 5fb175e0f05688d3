#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "hyperkick/errors.hpp"
#include "hyperkick/hypergeom.hpp"
#include "hyperkick/interp.hpp"
#include "hyperkick/units.hpp"

// Pair interaction curves and the laser-kick parameters. Curves come either
// from two-column data files (r in bohr, value in hartree/a.u., '#' comments,
// strictly increasing r) or from the built-in analytic families
//   "gauss:V0,R"    -> V(r) = -V0 exp(-(r/R)^2)
//   "pgauss:c,p,R"  -> c (r/R)^p exp(-(r/R)^2)
// Extrapolation: potentials continue below the table with A exp(-b r) fitted
// to the two innermost nodes and above it with the r^-6 tail through the
// outermost node; polarizability curves clamp to the boundary node values.

namespace hyperkick {

using units::timescale_of_energy;

class Curve1D {
 public:
  enum class LowEnd { exp_wall, clamp };
  enum class HighEnd { r6_tail, clamp };

  Curve1D() = default;

  static Curve1D from_table(std::vector<double> r, std::vector<double> v, LowEnd lo,
                            HighEnd hi, std::string descriptor) {
    Curve1D c;
    c.spline_ = CubicSpline(std::move(r), std::move(v));
    c.low_ = lo;
    c.high_ = hi;
    c.descriptor_ = std::move(descriptor);
    c.setup_tails();
    return c;
  }

  static Curve1D gauss(double v0, double r0) {
    if (!(r0 > 0.0)) throw ConstraintViolation("gauss model: R must be positive");
    Curve1D c;
    c.analytic_ = [v0, r0](double r) { return -v0 * std::exp(-(r / r0) * (r / r0)); };
    c.descriptor_ = "gauss:" + std::to_string(v0) + "," + std::to_string(r0);
    return c;
  }

  static Curve1D poly_gauss(double coeff, double power, double r0) {
    if (!(r0 > 0.0)) throw ConstraintViolation("pgauss model: R must be positive");
    Curve1D c;
    c.analytic_ = [coeff, power, r0](double r) {
      return coeff * std::pow(r / r0, power) * std::exp(-(r / r0) * (r / r0));
    };
    c.descriptor_ =
        "pgauss:" + std::to_string(coeff) + "," + std::to_string(power) + "," + std::to_string(r0);
    return c;
  }

  // "gauss:V0,R" or "pgauss:c,p,R"
  static Curve1D from_model(const std::string& spec) {
    auto colon = spec.find(':');
    if (colon == std::string::npos)
      throw ParseError("model spec '" + spec + "': expected family:params");
    std::string family = spec.substr(0, colon);
    std::vector<double> p;
    std::stringstream ss(spec.substr(colon + 1));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        p.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ParseError("model spec '" + spec + "': bad number '" + tok + "'");
      }
    }
    if (family == "gauss") {
      if (p.size() != 2) throw ParseError("gauss model needs 2 parameters V0,R");
      return gauss(p[0], p[1]);
    }
    if (family == "pgauss") {
      if (p.size() != 3) throw ParseError("pgauss model needs 3 parameters c,p,R");
      return poly_gauss(p[0], p[1], p[2]);
    }
    throw ParseError("unknown model family '" + family + "'");
  }

  static Curve1D from_file(const std::string& path, LowEnd lo, HighEnd hi) {
    std::ifstream in(path);
    if (!in) throw ConstraintViolation("cannot open data file: " + path);
    std::vector<double> r, v;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::istringstream ls(line);
      double a, b;
      if (!(ls >> a)) continue;  // blank or comment-only line
      if (!(ls >> b))
        throw ParseError(path + ":" + std::to_string(lineno) + ": expected two columns");
      double extra;
      if (ls >> extra)
        throw ParseError(path + ":" + std::to_string(lineno) + ": more than two columns");
      if (!r.empty() && a <= r.back())
        throw ParseError(path + ":" + std::to_string(lineno) + ": r must strictly increase");
      r.push_back(a);
      v.push_back(b);
    }
    if (r.size() < 4)
      throw ParseError(path + ": need at least 4 data rows");
    return from_table(std::move(r), std::move(v), lo, hi, "file:" + path);
  }

  bool valid() const { return analytic_ || !spline_.nodes().empty(); }
  const std::string& descriptor() const { return descriptor_; }

  double operator()(double r) const {
    if (analytic_) return analytic_(r);
    if (r < spline_.x_min()) {
      if (low_ == LowEnd::clamp) return spline_.values().front();
      if (!wall_) throw OutOfRange("Curve1D: r below table and no repulsive wall fit");
      return wall_->first * std::exp(-wall_->second * r);
    }
    if (r > spline_.x_max()) {
      if (high_ == HighEnd::clamp) return spline_.values().back();
      double rl = spline_.x_max();
      return spline_.values().back() * std::pow(rl / r, 6);
    }
    return spline_(r);
  }

 private:
  void setup_tails() {
    if (low_ != LowEnd::exp_wall) return;
    const auto& r = spline_.nodes();
    const auto& v = spline_.values();
    // A exp(-b r) through the two innermost nodes; requires same-sign,
    // decreasing-magnitude values (a repulsive wall)
    if (v[0] > 0.0 && v[1] > 0.0 && v[0] > v[1]) {
      double b = std::log(v[0] / v[1]) / (r[1] - r[0]);
      double A = v[0] * std::exp(b * r[0]);
      wall_ = std::make_pair(A, b);
    }
  }

  std::function<double(double)> analytic_;
  CubicSpline spline_;
  LowEnd low_ = LowEnd::exp_wall;
  HighEnd high_ = HighEnd::r6_tail;
  std::optional<std::pair<double, double>> wall_;
  std::string descriptor_ = "empty";
};

struct PairPotential {
  Curve1D curve;

  double operator()(double r) const { return curve(r); }
  const std::string& descriptor() const { return curve.descriptor(); }

  static PairPotential from_model(const std::string& spec) { return {Curve1D::from_model(spec)}; }
  static PairPotential from_file(const std::string& path) {
    return {Curve1D::from_file(path, Curve1D::LowEnd::exp_wall, Curve1D::HighEnd::r6_tail)};
  }
};

// Interaction-induced isotropic/anisotropic pair polarizabilities; both decay
// to the free-pair limit at large separation.
struct Polarizabilities {
  Curve1D iso;
  Curve1D aniso;

  static Polarizabilities from_files(const std::string& iso_path, const std::string& aniso_path) {
    return {Curve1D::from_file(iso_path, Curve1D::LowEnd::clamp, Curve1D::HighEnd::clamp),
            Curve1D::from_file(aniso_path, Curve1D::LowEnd::clamp, Curve1D::HighEnd::clamp)};
  }
  static Polarizabilities from_models(const std::string& iso_spec, const std::string& aniso_spec) {
    return {Curve1D::from_model(iso_spec), Curve1D::from_model(aniso_spec)};
  }
  std::string descriptor() const { return iso.descriptor() + "|" + aniso.descriptor(); }
};

// Delta-pulse parameters. For a Gaussian pulse of peak intensity I (W/cm^2)
// and FWHM tau, the kicked state is exp(i phase) with
// phase = C * sum_pairs V_laser_dimer and C = |eps|^2 sqrt(pi tau^2 / (4 ln 2)) / 2.
struct LaserKick {
  double intensity_wcm2 = 0.0;
  double tau_fwhm_fs = 0.0;
  double eps_bar_sq = 0.0;  // peak field squared, a.u.
  double C = 0.0;           // kick constant, a.u.

  static LaserKick from_intensity(double intensity, double tau_fs) {
    if (intensity < 0.0 || tau_fs <= 0.0)
      throw ConstraintViolation("LaserKick: need intensity >= 0 and tau > 0");
    LaserKick k;
    k.intensity_wcm2 = intensity;
    k.tau_fwhm_fs = tau_fs;
    k.eps_bar_sq = intensity / units::wcm2_per_au_intensity;
    double tau_au = units::fs_to_atu(tau_fs);
    k.C = 0.5 * k.eps_bar_sq * std::sqrt(units::pi * tau_au * tau_au / (4.0 * std::log(2.0)));
    return k;
  }
};

inline double kick_constant(const LaserKick& k) { return k.C; }

// Sum of the pair potential over the three bonds.
inline double trimer_potential(const PairPotential& pot, const TriangleGeometry& t) {
  t.validate();
  return pot(t.r12) + pot(t.r13) + pot(t.r23);
}

// Orientation-dependent pair term driving the kick:
// alpha_int(r) + (beta_int(r)/3) (3 cos^2 theta - 1). The angular part
// vanishes at the magic angle cos(theta) = 1/sqrt(3).
inline double laser_dimer(const Polarizabilities& pol, double r, double cos_theta) {
  return pol.iso(r) + pol.aniso(r) / 3.0 * (3.0 * cos_theta * cos_theta - 1.0);
}

}  // namespace hyperkick
