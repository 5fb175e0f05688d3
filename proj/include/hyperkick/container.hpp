#pragma once

#include <array>
#include <bit>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hyperkick/errors.hpp"

// Binary container shared by checkpoints, basis caches, and state snapshots.
//
// Layout (all integers and floats little-endian):
//   bytes 0-7   magic "HKBLK1\n\0"
//   u32         format version (currently 1)
//   i64[3]      truncation tuple (J_max, m_max, n_max; zeros if unused)
//   u32 n_meta  then per entry: u32 key length, key bytes, u32 value length,
//               value bytes (UTF-8, no terminators)
//   u32 n_blocks then per block:
//               u32 name length, name bytes,
//               u8 dtype (0 = real f64, 1 = complex f64 interleaved re,im),
//               u8 rank (1..4), i64 dims[rank],
//               f64 payload, row-major, dims product x (1 or 2) values
//   u64         FNV-1a-64 checksum of every preceding byte
//
// Writes are atomic: the file is assembled under a temporary name in the
// destination directory and renamed into place.

namespace hyperkick {

struct Block {
  std::vector<std::int64_t> dims;
  bool is_complex = false;
  std::vector<double> data;  // re,im interleaved when complex

  std::int64_t count() const {
    std::int64_t n = 1;
    for (auto d : dims) n *= d;
    return n;
  }
};

struct Container {
  std::array<std::int64_t, 3> truncation{0, 0, 0};
  std::map<std::string, std::string> meta;
  std::map<std::string, Block> blocks;

  bool has(const std::string& name) const { return blocks.count(name) != 0; }

  const Block& at(const std::string& name) const {
    auto it = blocks.find(name);
    if (it == blocks.end()) throw CheckpointIOFailure("container: missing block '" + name + "'");
    return it->second;
  }

  void put_vector(const std::string& name, const Eigen::VectorXd& v) {
    Block b;
    b.dims = {v.size()};
    b.data.assign(v.data(), v.data() + v.size());
    blocks[name] = std::move(b);
  }

  void put_matrix(const std::string& name, const Eigen::MatrixXcd& m) {
    Block b;
    b.dims = {m.rows(), m.cols()};
    b.is_complex = true;
    b.data.resize(static_cast<std::size_t>(2 * m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        b.data[k++] = m(i, j).real();
        b.data[k++] = m(i, j).imag();
      }
    blocks[name] = std::move(b);
  }

  void put_real_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    Block b;
    b.dims = {m.rows(), m.cols()};
    b.data.resize(static_cast<std::size_t>(m.size()));
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) b.data[k++] = m(i, j);
    blocks[name] = std::move(b);
  }

  Eigen::VectorXd get_vector(const std::string& name) const {
    const Block& b = at(name);
    if (b.is_complex || b.dims.size() != 1)
      throw CheckpointIOFailure("container: block '" + name + "' is not a real vector");
    return Eigen::Map<const Eigen::VectorXd>(b.data.data(), b.dims[0]);
  }

  Eigen::MatrixXcd get_matrix(const std::string& name) const {
    const Block& b = at(name);
    if (!b.is_complex || b.dims.size() != 2)
      throw CheckpointIOFailure("container: block '" + name + "' is not a complex matrix");
    Eigen::MatrixXcd m(b.dims[0], b.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        m(i, j) = {b.data[k], b.data[k + 1]};
        k += 2;
      }
    return m;
  }

  Eigen::MatrixXd get_real_matrix(const std::string& name) const {
    const Block& b = at(name);
    if (b.is_complex || b.dims.size() != 2)
      throw CheckpointIOFailure("container: block '" + name + "' is not a real matrix");
    Eigen::MatrixXd m(b.dims[0], b.dims[1]);
    std::size_t k = 0;
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = b.data[k++];
    return m;
  }

  double meta_number(const std::string& key) const {
    auto it = meta.find(key);
    if (it == meta.end()) throw CheckpointIOFailure("container: missing meta key '" + key + "'");
    try {
      return std::stod(it->second);
    } catch (const std::exception&) {
      throw CheckpointIOFailure("container: meta '" + key + "' is not numeric");
    }
  }
};

namespace detail {

inline constexpr char kContainerMagic[8] = {'H', 'K', 'B', 'L', 'K', '1', '\n', '\0'};
inline constexpr std::uint32_t kContainerVersion = 1;

inline void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void append_i64(std::string& buf, std::int64_t v) {
  auto u = static_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xff));
}
inline void append_f64(std::string& buf, double v) {
  append_i64(buf, static_cast<std::int64_t>(std::bit_cast<std::uint64_t>(v)));
}
inline void append_str(std::string& buf, const std::string& s) {
  append_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& what;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw CheckpointIOFailure("container '" + what + "': truncated data");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::int64_t i64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return static_cast<std::int64_t>(v);
  }
  double f64() { return std::bit_cast<double>(static_cast<std::uint64_t>(i64())); }
  std::string str() {
    std::uint32_t n = u32();
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

inline std::uint64_t fnv1a64(const char* data, std::size_t n) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace detail

inline void save_container(const std::string& path, const Container& c) {
  std::string buf;
  buf.append(detail::kContainerMagic, 8);
  detail::append_u32(buf, detail::kContainerVersion);
  for (auto t : c.truncation) detail::append_i64(buf, t);
  detail::append_u32(buf, static_cast<std::uint32_t>(c.meta.size()));
  for (const auto& [k, v] : c.meta) {
    detail::append_str(buf, k);
    detail::append_str(buf, v);
  }
  detail::append_u32(buf, static_cast<std::uint32_t>(c.blocks.size()));
  for (const auto& [name, b] : c.blocks) {
    if (b.dims.empty() || b.dims.size() > 4)
      throw CheckpointIOFailure("container: block '" + name + "' rank must be 1..4");
    if (b.count() * (b.is_complex ? 2 : 1) != static_cast<std::int64_t>(b.data.size()))
      throw CheckpointIOFailure("container: block '" + name + "' dims/data size mismatch");
    detail::append_str(buf, name);
    buf.push_back(b.is_complex ? 1 : 0);
    buf.push_back(static_cast<char>(b.dims.size()));
    for (auto d : b.dims) detail::append_i64(buf, d);
    for (double v : b.data) detail::append_f64(buf, v);
  }
  detail::append_i64(buf, static_cast<std::int64_t>(detail::fnv1a64(buf.data(), buf.size())));

  std::filesystem::path target(path);
  std::filesystem::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointIOFailure("cannot open for writing: " + tmp.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointIOFailure("short write: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, target, ec);
  if (ec) throw CheckpointIOFailure("cannot rename " + tmp.string() + " -> " + path);
}

inline Container load_container(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointIOFailure("cannot open container: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < 8 + 4 + 24 + 8) throw CheckpointIOFailure("container '" + path + "': too short");

  std::uint64_t stored = 0;
  for (int i = 0; i < 8; ++i)
    stored |= std::uint64_t(static_cast<unsigned char>(buf[buf.size() - 8 + i])) << (8 * i);
  if (detail::fnv1a64(buf.data(), buf.size() - 8) != stored)
    throw CheckpointIOFailure("container '" + path + "': checksum mismatch");

  detail::Reader r{buf, 0, path};
  r.need(8);
  if (!std::equal(detail::kContainerMagic, detail::kContainerMagic + 8, buf.begin()))
    throw CheckpointIOFailure("container '" + path + "': bad magic");
  r.pos = 8;
  std::uint32_t version = r.u32();
  if (version != detail::kContainerVersion)
    throw CheckpointIOFailure("container '" + path + "': unsupported version " +
                              std::to_string(version));
  Container c;
  for (auto& t : c.truncation) t = r.i64();
  std::uint32_t nmeta = r.u32();
  for (std::uint32_t i = 0; i < nmeta; ++i) {
    std::string k = r.str();
    c.meta[k] = r.str();
  }
  std::uint32_t nblocks = r.u32();
  for (std::uint32_t i = 0; i < nblocks; ++i) {
    std::string name = r.str();
    r.need(2);
    Block b;
    b.is_complex = buf[r.pos++] != 0;
    int rank = static_cast<unsigned char>(buf[r.pos++]);
    if (rank < 1 || rank > 4)
      throw CheckpointIOFailure("container '" + path + "': bad block rank");
    b.dims.resize(rank);
    for (auto& d : b.dims) {
      d = r.i64();
      if (d <= 0) throw CheckpointIOFailure("container '" + path + "': nonpositive dim");
    }
    std::int64_t nvals = b.count() * (b.is_complex ? 2 : 1);
    b.data.resize(static_cast<std::size_t>(nvals));
    for (auto& v : b.data) v = r.f64();
    c.blocks[name] = std::move(b);
  }
  return c;
}

}  // namespace hyperkick
