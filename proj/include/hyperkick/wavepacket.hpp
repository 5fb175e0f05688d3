#pragma once

#include <Eigen/Dense>
#include <complex>
#include <string>
#include <vector>

#include "hyperkick/container.hpp"
#include "hyperkick/errors.hpp"
#include "hyperkick/radialgrid.hpp"

// Channel-resolved wave packet: one complex radial weight F^(J)_{m,n}(rho)
// per channel, stored as a (channels x rho-nodes) matrix per J block. The
// packet norm is sum over channels of int |F|^2 rho^5 drho.
//
// Truncation convention (all bounds inclusive): J = 0, 2, ..., J_max;
// m = 0, ±6, ..., ±m_max; n = 0, 1, ..., n_max. Within a J block rows are
// ordered by m ascending, then n ascending.

namespace hyperkick {

struct ChannelIndex {
  int J = 0;
  int m = 0;
  int n = 0;

  void validate() const {
    if (J < 0 || J % 2 != 0)
      throw ConstraintViolation("ChannelIndex: J must be even and nonnegative");
    if (m % 6 != 0) throw ConstraintViolation("ChannelIndex: m must be a multiple of 6");
    if (n < 0) throw ConstraintViolation("ChannelIndex: n must be nonnegative");
  }
  bool operator==(const ChannelIndex&) const = default;
};

class ChannelSet {
 public:
  ChannelSet() = default;

  ChannelSet(int J_max, int m_max, int n_max) : J_max_(J_max), m_max_(m_max), n_max_(n_max) {
    if (J_max < 0 || J_max % 2 != 0)
      throw ConstraintViolation("ChannelSet: J_max must be even and nonnegative");
    if (m_max < 0 || m_max % 6 != 0)
      throw ConstraintViolation("ChannelSet: m_max must be a nonnegative multiple of 6");
    if (n_max < 0) throw ConstraintViolation("ChannelSet: n_max must be nonnegative");
  }

  int J_max() const { return J_max_; }
  int m_max() const { return m_max_; }
  int n_max() const { return n_max_; }

  int J_count() const { return J_max_ / 2 + 1; }
  int m_count() const { return 2 * (m_max_ / 6) + 1; }
  int n_count() const { return n_max_ + 1; }
  int rows_per_J() const { return m_count() * n_count(); }
  int total_rows() const { return J_count() * rows_per_J(); }

  std::vector<int> J_values() const {
    std::vector<int> v;
    for (int J = 0; J <= J_max_; J += 2) v.push_back(J);
    return v;
  }

  int row_of(int m, int n) const {
    if (std::abs(m) > m_max_ || m % 6 != 0)
      throw ConstraintViolation("ChannelSet: m outside truncation");
    if (n < 0 || n > n_max_) throw ConstraintViolation("ChannelSet: n outside truncation");
    return (m + m_max_) / 6 * n_count() + n;
  }
  int m_of_row(int row) const { return -m_max_ + 6 * (row / n_count()); }
  int n_of_row(int row) const { return row % n_count(); }

  bool contains(const ChannelIndex& c) const {
    return c.J >= 0 && c.J <= J_max_ && c.J % 2 == 0 && std::abs(c.m) <= m_max_ &&
           c.m % 6 == 0 && c.n >= 0 && c.n <= n_max_;
  }

  std::array<std::int64_t, 3> truncation() const { return {J_max_, m_max_, n_max_}; }

  std::string descriptor() const {
    return "J<=" + std::to_string(J_max_) + ",|m|<=" + std::to_string(m_max_) +
           ",n<=" + std::to_string(n_max_);
  }

  bool operator==(const ChannelSet&) const = default;

 private:
  int J_max_ = 0, m_max_ = 0, n_max_ = 0;
};

class WavePacket {
 public:
  WavePacket() = default;

  WavePacket(const ChannelSet& channels, const RadialGrid& grid, double time = 0.0)
      : channels_(channels), grid_(grid), time_(time) {
    blocks_.resize(channels_.J_count());
    for (auto& b : blocks_)
      b = Eigen::MatrixXcd::Zero(channels_.rows_per_J(), grid_.size());
    measure_.resize(grid_.size());
    for (int i = 0; i < grid_.size(); ++i)
      measure_[i] = grid_.weights()[i] * std::pow(grid_.nodes()[i], 5);
  }

  const ChannelSet& channels() const { return channels_; }
  const RadialGrid& grid() const { return grid_; }
  double time() const { return time_; }
  void set_time(double t) { time_ = t; }

  // integration measure rho^5 w per node (for int ... rho^5 drho sums)
  const Eigen::VectorXd& measure() const { return measure_; }

  Eigen::MatrixXcd& block(int J) { return blocks_.at(block_index(J)); }
  const Eigen::MatrixXcd& block(int J) const { return blocks_.at(block_index(J)); }

  Eigen::MatrixXcd::RowXpr row(const ChannelIndex& c) {
    return block(c.J).row(channels_.row_of(c.m, c.n));
  }
  Eigen::MatrixXcd::ConstRowXpr row(const ChannelIndex& c) const {
    return block(c.J).row(channels_.row_of(c.m, c.n));
  }

  double norm2() const {
    double acc = 0.0;
    for (int J : channels_.J_values()) acc += norm2_J(J);
    return acc;
  }

  double norm2_J(int J) const {
    const auto& b = block(J);
    double acc = 0.0;
    for (Eigen::Index r = 0; r < b.rows(); ++r)
      for (Eigen::Index i = 0; i < b.cols(); ++i) acc += std::norm(b(r, i)) * measure_[i];
    return acc;
  }

  std::complex<double> inner(const WavePacket& other) const {
    require_compatible(other);
    std::complex<double> acc = 0.0;
    for (int J : channels_.J_values()) {
      const auto& a = block(J);
      const auto& b = other.block(J);
      for (Eigen::Index r = 0; r < a.rows(); ++r)
        for (Eigen::Index i = 0; i < a.cols(); ++i)
          acc += std::conj(a(r, i)) * b(r, i) * measure_[i];
    }
    return acc;
  }

  void scale(std::complex<double> z) {
    for (auto& b : blocks_) b *= z;
  }

  void normalize() {
    double n = std::sqrt(norm2());
    if (n <= 0.0) throw ZeroDensityStart("WavePacket::normalize: zero norm");
    scale(1.0 / n);
  }

  void require_compatible(const WavePacket& other) const {
    if (!(channels_ == other.channels_) || !grid_.same_as(other.grid_))
      throw GridMismatch("WavePacket: incompatible channel set or radial grid");
  }

  void save(const std::string& path) const {
    Container c;
    c.truncation = channels_.truncation();
    c.meta["kind"] = "wavepacket";
    c.meta["time"] = format_full(time_);
    c.meta["grid_kind"] = grid_.stretch() == 0.0 ? "uniform" : "exp";
    c.meta["grid_n"] = std::to_string(grid_.size());
    c.meta["grid_rmin"] = format_full(grid_.r_min());
    c.meta["grid_rmax"] = format_full(grid_.r_max());
    c.meta["grid_s"] = format_full(grid_.stretch());
    for (int J : channels_.J_values()) c.put_matrix("F/J" + std::to_string(J), block(J));
    save_container(path, c);
  }

  static WavePacket load(const std::string& path) {
    Container c = load_container(path);
    if (c.meta.count("kind") == 0 || c.meta.at("kind") != "wavepacket")
      throw CheckpointIOFailure(path + ": not a wave-packet container");
    ChannelSet cs(static_cast<int>(c.truncation[0]), static_cast<int>(c.truncation[1]),
                  static_cast<int>(c.truncation[2]));
    int n = static_cast<int>(c.meta_number("grid_n"));
    double rmin = c.meta_number("grid_rmin"), rmax = c.meta_number("grid_rmax");
    RadialGrid g = c.meta.at("grid_kind") == "uniform"
                       ? RadialGrid::uniform(n, rmin, rmax)
                       : RadialGrid::exponential(n, rmin, rmax, c.meta_number("grid_s"));
    WavePacket wp(cs, g, c.meta_number("time"));
    for (int J : cs.J_values()) {
      Eigen::MatrixXcd m = c.get_matrix("F/J" + std::to_string(J));
      if (m.rows() != cs.rows_per_J() || m.cols() != g.size())
        throw CheckpointIOFailure(path + ": block shape mismatch");
      wp.block(J) = std::move(m);
    }
    return wp;
  }

 private:
  int block_index(int J) const {
    if (J < 0 || J % 2 != 0 || J > channels_.J_max())
      throw ConstraintViolation("WavePacket: J outside truncation");
    return J / 2;
  }

  static std::string format_full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }

  ChannelSet channels_;
  RadialGrid grid_;
  double time_ = 0.0;
  std::vector<Eigen::MatrixXcd> blocks_;
  Eigen::VectorXd measure_;
};

}  // namespace hyperkick
