#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include "hyperkick/container.hpp"

using namespace hyperkick;
using Catch::Matchers::ContainsSubstring;

namespace {

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& stem) {
    static int counter = 0;
    path = stem + "_" + std::to_string(counter++) + ".hkb";
    std::remove(path.c_str());
  }
  ~TempPath() { std::remove(path.c_str()); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// independent restatement of FNV-1a-64, used to re-seal tampered files so a
// specific validation failure (not the checksum) is exercised
std::uint64_t fnv(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 14695981039346656037ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  return h;
}

void reseal(std::string& bytes) {
  std::uint64_t h = fnv(bytes, bytes.size() - 8);
  for (int i = 0; i < 8; ++i)
    bytes[bytes.size() - 8 + i] = static_cast<char>((h >> (8 * i)) & 0xff);
}

Container sample() {
  Container c;
  c.truncation = {4, 42, 29};
  c.meta["kind"] = "test";
  c.meta["alpha"] = "1.25";
  c.meta["note"] = "quick brown fox";

  Eigen::VectorXd v(7);
  v << 0.0, -1.5, 3.25e-300, 7.0e300, 1.0 / 3.0, -0.0, 42.0;
  c.put_vector("grid/w", v);

  Eigen::MatrixXcd m(3, 4);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j)
      m(i, j) = std::complex<double>(std::sin(1.0 + i + 10.0 * j), std::cos(2.0 + i * j));
  c.put_matrix("state/F", m);

  Eigen::MatrixXd w(2, 5);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) w(i, j) = std::tgamma(1.0 + i + 0.3 * j);
  c.put_real_matrix("basis/P", w);
  return c;
}

}  // namespace

TEST_CASE("container roundtrip is bit-exact", "[container]") {
  TempPath f("hk_test_container");
  Container c = sample();
  save_container(f.path, c);

  CHECK_FALSE(std::filesystem::exists(f.path + ".tmp"));

  Container r = load_container(f.path);
  CHECK(r.truncation == c.truncation);
  CHECK(r.meta == c.meta);
  REQUIRE(r.blocks.size() == c.blocks.size());
  for (const auto& [name, b] : c.blocks) {
    REQUIRE(r.has(name));
    const Block& rb = r.at(name);
    CHECK(rb.dims == b.dims);
    CHECK(rb.is_complex == b.is_complex);
    CHECK(rb.data == b.data);  // exact, including signed zero
  }
  CHECK(std::signbit(r.at("grid/w").data[5]));
  CHECK(r.meta_number("alpha") == 1.25);

  Eigen::MatrixXcd m = r.get_matrix("state/F");
  CHECK(m.rows() == 3);
  CHECK(m(1, 2) == std::complex<double>(std::sin(22.0), std::cos(4.0)));
  Eigen::VectorXd v = r.get_vector("grid/w");
  CHECK(v[3] == 7.0e300);
  Eigen::MatrixXd w = r.get_real_matrix("basis/P");
  CHECK(w(1, 4) == std::tgamma(3.2));
}

TEST_CASE("container preserves non-finite and NaN payloads", "[container]") {
  TempPath f("hk_test_container");
  Container c;
  Eigen::VectorXd v(3);
  v << std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(),
      std::numeric_limits<double>::quiet_NaN();
  c.put_vector("v", v);
  save_container(f.path, c);
  Eigen::VectorXd r = load_container(f.path).get_vector("v");
  CHECK(r[0] == v[0]);
  CHECK(r[1] == v[1]);
  CHECK(std::isnan(r[2]));
}

TEST_CASE("container overwrite replaces previous content", "[container]") {
  TempPath f("hk_test_container");
  save_container(f.path, sample());
  Container small;
  small.meta["kind"] = "second";
  save_container(f.path, small);
  Container r = load_container(f.path);
  CHECK(r.meta.at("kind") == "second");
  CHECK(r.blocks.empty());
}

TEST_CASE("container detects corruption", "[container]") {
  TempPath f("hk_test_container");
  save_container(f.path, sample());
  std::string bytes = slurp(f.path);

  SECTION("flipped payload byte fails the checksum") {
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x5a);
    dump(f.path, bytes);
    CHECK_THROWS_MATCHES(load_container(f.path), CheckpointIOFailure,
                         Catch::Matchers::MessageMatches(ContainsSubstring("checksum")));
  }
  SECTION("truncated file is rejected") {
    dump(f.path, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_container(f.path), CheckpointIOFailure);
  }
  SECTION("nearly empty file is rejected") {
    dump(f.path, bytes.substr(0, 10));
    CHECK_THROWS_MATCHES(load_container(f.path), CheckpointIOFailure,
                         Catch::Matchers::MessageMatches(ContainsSubstring("too short")));
  }
  SECTION("bad magic is rejected even with a valid checksum") {
    bytes[0] = 'X';
    reseal(bytes);
    dump(f.path, bytes);
    CHECK_THROWS_MATCHES(load_container(f.path), CheckpointIOFailure,
                         Catch::Matchers::MessageMatches(ContainsSubstring("magic")));
  }
  SECTION("unsupported version is rejected") {
    bytes[8] = 9;  // version field follows the 8-byte magic
    reseal(bytes);
    dump(f.path, bytes);
    CHECK_THROWS_MATCHES(load_container(f.path), CheckpointIOFailure,
                         Catch::Matchers::MessageMatches(ContainsSubstring("version")));
  }
  SECTION("missing file") {
    CHECK_THROWS_AS(load_container("hk_test_container_nonexistent.hkb"), CheckpointIOFailure);
  }
}

TEST_CASE("container access errors", "[container]") {
  Container c = sample();
  CHECK_THROWS_MATCHES(c.at("nope"), CheckpointIOFailure,
                       Catch::Matchers::MessageMatches(ContainsSubstring("missing block")));
  CHECK_THROWS_AS(c.get_vector("state/F"), CheckpointIOFailure);   // complex, not a vector
  CHECK_THROWS_AS(c.get_matrix("basis/P"), CheckpointIOFailure);   // real, not complex
  CHECK_THROWS_AS(c.get_real_matrix("grid/w"), CheckpointIOFailure);  // rank 1
  CHECK_THROWS_AS(c.meta_number("nope"), CheckpointIOFailure);
  CHECK_THROWS_AS(c.meta_number("note"), CheckpointIOFailure);  // not numeric

  TempPath f("hk_test_container");
  Container bad;
  bad.blocks["empty"] = Block{};  // rank 0
  CHECK_THROWS_AS(save_container(f.path, bad), CheckpointIOFailure);

  Container mismatch;
  Block b;
  b.dims = {3};
  b.data = {1.0, 2.0};  // dims say 3
  mismatch.blocks["b"] = b;
  CHECK_THROWS_AS(save_container(f.path, mismatch), CheckpointIOFailure);
}
