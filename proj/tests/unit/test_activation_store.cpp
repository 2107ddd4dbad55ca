#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "doctest.h"
#include "repflow/activation_store.hpp"
#include "repflow/error.hpp"
#include "repflow/random.hpp"
#include "test_util.hpp"

using namespace repflow;
namespace fs = std::filesystem;

namespace {

// Reference binary32 encoder built from frexp, independent of bit_cast.
// Handles normal numbers and zero, which is all the tests feed it.
std::array<unsigned char, 4> ref_encode(float v) {
  std::uint32_t sign = std::signbit(v) ? 1u : 0u;
  std::uint32_t exponent = 0, mantissa = 0;
  if (v != 0.0f) {
    int e = 0;
    const double frac = std::frexp(std::fabs(static_cast<double>(v)), &e);  // v = frac * 2^e, frac in [0.5, 1)
    exponent = static_cast<std::uint32_t>(e - 1 + 127);
    mantissa = static_cast<std::uint32_t>(std::ldexp(frac * 2.0 - 1.0, 23));
  }
  const std::uint32_t bits = (sign << 31) | (exponent << 23) | mantissa;
  return {static_cast<unsigned char>(bits & 0xff), static_cast<unsigned char>((bits >> 8) & 0xff),
          static_cast<unsigned char>((bits >> 16) & 0xff), static_cast<unsigned char>(bits >> 24)};
}

std::vector<unsigned char> file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ActivationStack random_stack(std::size_t l, std::size_t n, std::size_t d, std::uint64_t seed) {
  CounterRng rng(seed, 1);
  std::vector<double> data(l * n * d);
  for (double& v : data) v = rng.normal(0.0, 3.0);
  return ActivationStack(l, n, d, std::move(data), {"model-x", "sample-" + std::to_string(seed), "task-y"});
}

void write_manifest(const fs::path& dir, const std::string& body) {
  std::ofstream(dir / kManifestFile) << body;
}

}  // namespace

TEST_CASE("2x1x1 stack encodes to the expected bytes") {
  const ActivationStack s(2, 1, 1, {1.0, 2.0});
  const auto dir = test::temp_dir("bytes");
  write_stack(s, dir);
  const std::vector<unsigned char> expected{0x00, 0x00, 0x80, 0x3F, 0x00, 0x00, 0x00, 0x40};
  CHECK(file_bytes(dir / kActivationsFile) == expected);
}

TEST_CASE("encoder agrees with a reference IEEE-754 encoder") {
  CounterRng rng(5, 5);
  std::vector<double> values{0.0, 1.0, -1.0, 0.5, 3.140625, -1e-20, 6.5e30};
  for (int i = 0; i < 2000; ++i) values.push_back(rng.normal(0.0, 100.0));
  const auto bytes = encode_f32le(values);
  REQUIRE(bytes.size() == 4 * values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto ref = ref_encode(static_cast<float>(values[i]));
    for (int k = 0; k < 4; ++k) REQUIRE(bytes[4 * i + k] == ref[k]);
  }
}

TEST_CASE("round trip equals the binary32 rounding") {
  const std::array<std::array<std::size_t, 3>, 5> shapes{{{2, 1, 1}, {3, 7, 5}, {13, 64, 33}, {2, 512, 3}, {64, 512, 256}}};
  std::uint64_t seed = 0;
  for (const auto& [l, n, d] : shapes) {
    const ActivationStack s = random_stack(l, n, d, ++seed);
    const auto dir = test::temp_dir("roundtrip");
    write_stack(s, dir);
    const ActivationStack back = read_stack(dir);
    REQUIRE(back.layers() == l);
    REQUIRE(back.tokens() == n);
    REQUIRE(back.dims() == d);
    CHECK(back.meta() == s.meta());
    bool equal = true;
    for (std::size_t i = 0; i < s.data().size(); ++i)
      equal = equal && back.data()[i] == static_cast<double>(static_cast<float>(s.data()[i]));
    CHECK(equal);
  }
}

TEST_CASE("writes are byte-identical and the fixture re-encodes exactly") {
  const ActivationStack s = random_stack(4, 3, 2, 77);
  const auto a = test::temp_dir("twice_a");
  const auto b = test::temp_dir("twice_b");
  write_stack(s, a);
  write_stack(s, b);
  CHECK(file_bytes(a / kManifestFile) == file_bytes(b / kManifestFile));
  CHECK(file_bytes(a / kActivationsFile) == file_bytes(b / kActivationsFile));

  const fs::path fixture = test::fixtures() / "stack_small";
  const ActivationStack f = read_stack(fixture);
  CHECK(f.layers() == 3);
  CHECK(f.at(2, 1, 0) == 0.5);
  const auto c = test::temp_dir("fixture_copy");
  write_stack(f, c);
  CHECK(file_bytes(c / kManifestFile) == file_bytes(fixture / kManifestFile));
  CHECK(file_bytes(c / kActivationsFile) == file_bytes(fixture / kActivationsFile));
}

TEST_CASE("non-finite data is rejected before anything is written") {
  std::vector<double> data(8, 1.0);
  data[5] = std::numeric_limits<double>::quiet_NaN();
  const ActivationStack s(2, 2, 2, data);
  const auto dir = test::temp_dir("nan") / "out";
  CHECK_THROWS_WITH_AS(write_stack(s, dir), doctest::Contains("non-finite activation"), Error);
  CHECK_FALSE(fs::exists(dir / kActivationsFile));
  CHECK_FALSE(fs::exists(dir / kManifestFile));
}

TEST_CASE("read_stack validation errors") {
  const ActivationStack s = random_stack(2, 2, 2, 3);
  const auto dir = test::temp_dir("errors");
  write_stack(s, dir);

  SUBCASE("length mismatch") {
    write_manifest(dir, R"({"version":1,"layers":3,"tokens":2,"dims":2,"dtype":"f32le","layout":"layer_token_dim","model":"","sample_id":"","task":""})");
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("length mismatch"), Error);
  }
  SUBCASE("unsupported dtype") {
    write_manifest(dir, R"({"version":1,"layers":2,"tokens":2,"dims":2,"dtype":"f64le","layout":"layer_token_dim","model":"","sample_id":"","task":""})");
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("unsupported dtype"), Error);
  }
  SUBCASE("unsupported layout") {
    write_manifest(dir, R"({"version":1,"layers":2,"tokens":2,"dims":2,"dtype":"f32le","layout":"token_layer_dim","model":"","sample_id":"","task":""})");
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("unsupported layout"), Error);
  }
  SUBCASE("unsupported version") {
    write_manifest(dir, R"({"version":2,"layers":2,"tokens":2,"dims":2,"dtype":"f32le","layout":"layer_token_dim","model":"","sample_id":"","task":""})");
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("unsupported version"), Error);
  }
  SUBCASE("missing binary") {
    fs::remove(dir / kActivationsFile);
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("missing file"), Error);
  }
  SUBCASE("missing manifest") {
    fs::remove(dir / kManifestFile);
    CHECK_THROWS_WITH_AS(read_stack(dir), doctest::Contains("missing file"), Error);
  }
}

TEST_CASE("constructor enforces shape invariants") {
  CHECK_THROWS_AS(ActivationStack(1, 1, 1, {1.0}), Error);
  CHECK_THROWS_AS(ActivationStack(2, 0, 1, {}), Error);
  CHECK_THROWS_AS(ActivationStack(2, 1, 1, {1.0}), Error);
  const Matrix a = Matrix::Ones(2, 3);
  const Matrix b = Matrix::Ones(3, 2);
  const std::vector<Matrix> mixed{a, b};
  CHECK_THROWS_AS(ActivationStack::from_layers(mixed), Error);
}

TEST_CASE("layer and token views follow layer/token/dim order") {
  const ActivationStack s(2, 2, 3, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  CHECK(s.at(1, 0, 2) == 8);
  CHECK(s.layer(1)(1, 0) == 9);
  CHECK(s.token(0, 1)(2) == 5);
  CHECK(s.scaled(2.0).at(1, 1, 2) == 22);
}

TEST_CASE("dataset index round trip") {
  const auto root = test::temp_dir("dataset");
  std::vector<DatasetEntry> entries;
  for (int i = 0; i < 3; ++i) {
    const std::string name = "s" + std::to_string(i);
    write_stack(random_stack(3, 2, 2, 100 + i), root / name);
    entries.push_back({name, i % 2});
  }
  write_dataset_index(root, entries);
  const DatasetIndex index = read_dataset_index(root);
  REQUIRE(index.entries.size() == 3);
  CHECK(index.entries[2].label == 0);
  CHECK(read_dataset_index(root / kDatasetIndexFile).entries.size() == 3);
  const auto data = load_dataset(index);
  CHECK(data[1].second == 1);
  CHECK(data[1].first.layers() == 3);
}
