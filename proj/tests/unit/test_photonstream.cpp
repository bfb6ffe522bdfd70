#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "qdot/photonstream.hpp"
#include "qdot/random.hpp"

using namespace qdot;

namespace {

TagStream random_stream(std::uint64_t seed, std::size_t n, bool truth, int channels = 2) {
  Engine rng(seed);
  std::vector<std::string> labels;
  for (int c = 0; c < channels; ++c) labels.push_back("ch" + std::to_string(c));
  const TimePs duration = 1'000'000'000;
  TagStreamBuilder b(labels, duration, truth);
  std::uniform_int_distribution<TimePs> t(0, duration);
  std::uniform_int_distribution<int> ch(0, channels - 1);
  std::normal_distribution<double> f(0.0, 1e9);
  for (std::size_t i = 0; i < n; ++i) {
    PhotonTag tag;
    tag.channel = static_cast<std::uint8_t>(ch(rng));
    tag.timestamp = t(rng);
    tag.truth_frequency = f(rng);
    tag.truth_dephasing_rate = 5e7;
    if (truth) {
      b.add(tag);
    } else {
      b.add(tag.channel, tag.timestamp);
    }
  }
  b.set_meta("source", "test");
  return std::move(b).build();
}

std::string encode(const TagStream& s) {
  std::ostringstream o;
  write_stream(s, o);
  return o.str();
}

TagStream decode(const std::string& bytes) {
  std::istringstream i(bytes);
  return read_stream(i);
}

void put_u64(std::string& s, std::size_t at, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) s[at + k] = static_cast<char>((v >> (8 * k)) & 0xff);
}

}  // namespace

TEST_CASE("builder sorts by time then channel") {
  TagStreamBuilder b({"a", "b"}, 100, false);
  b.add(1, 50);
  b.add(0, 50);
  b.add(0, 10);
  const TagStream s = std::move(b).build();
  REQUIRE(s.size() == 3);
  CHECK(s.timestamps() == std::vector<TimePs>{10, 50, 50});
  CHECK(s.channels() == std::vector<std::uint8_t>{0, 0, 1});
  CHECK_NOTHROW(s.validate());
}

TEST_CASE("empty stream writes header only") {
  TagStreamBuilder b({"a"}, 0, false);
  const TagStream s = std::move(b).build();
  const std::string bytes = encode(s);
  CHECK(bytes.size() == header_size(s));
  CHECK(decode(bytes) == s);
}

TEST_CASE("three tags round trip with fixed-width records") {
  TagStreamBuilder b({"a", "b"}, 1000, false);
  b.add(0, 1);
  b.add(1, 2);
  b.add(0, 999);
  const TagStream s = std::move(b).build();
  const std::string bytes = encode(s);
  CHECK(bytes.size() == header_size(s) + 3 * kRecordSize);
  CHECK(decode(bytes) == s);
}

TEST_CASE("file size is header plus records") {
  const TagStream s = random_stream(3, 100000, true);
  const std::string bytes = encode(s);
  CHECK(bytes.size() == header_size(s) + s.size() * kTruthRecordSize);
  CHECK(record_size(false) == 9);
  CHECK(record_size(true) == 25);
}

TEST_CASE("round trip over random streams") {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const bool truth = seed % 2 == 0;
    const TagStream s = random_stream(seed, 1 + seed * 37, truth, 1 + static_cast<int>(seed % 3));
    CHECK(decode(encode(s)) == s);
  }
}

TEST_CASE("out-of-order records are rejected") {
  TagStreamBuilder b({"a"}, 1000, false);
  b.add(0, 10);
  b.add(0, 20);
  std::string bytes = encode(std::move(b).build());
  const std::size_t first = bytes.size() - 2 * kRecordSize;
  put_u64(bytes, first + 1, 30);
  CHECK_THROWS_AS(decode(bytes), FormatError);
}

TEST_CASE("truncated final record reports lengths") {
  const TagStream s = random_stream(1, 10, false);
  std::string bytes = encode(s);
  bytes.resize(bytes.size() - 4);
  try {
    decode(bytes);
    FAIL("expected FormatError");
  } catch (const FormatError& e) {
    const std::string what = e.what();
    CHECK(what.find("expected 9") != std::string::npos);
    CHECK(what.find("got 5") != std::string::npos);
  }
}

TEST_CASE("bad magic is rejected") {
  std::string bytes = encode(random_stream(1, 3, false));
  bytes[0] = 'X';
  CHECK_THROWS_AS(decode(bytes), FormatError);
}

TEST_CASE("ideal detector is identity minus truth") {
  const TagStream s = random_stream(7, 5000, true);
  const TagStream d = apply_detector(s, DetectorModel::ideal(), 1);
  CHECK_FALSE(d.has_truth());
  CHECK(d.timestamps() == s.timestamps());
  CHECK(d.channels() == s.channels());
}

TEST_CASE("efficiency thinning follows the binomial law") {
  TagStreamBuilder b({"a"}, 2'000'000'000, false);
  for (TimePs i = 0; i < 1'000'000; ++i) b.add(0, i * 1000);
  const TagStream s = std::move(b).build();
  DetectorModel m = DetectorModel::ideal();
  m.efficiency = 0.3;
  const double n = static_cast<double>(apply_detector(s, m, 11).size());
  const double sd = std::sqrt(1e6 * 0.3 * 0.7);
  CHECK(std::abs(n - 3e5) < 4.0 * sd);
}

TEST_CASE("dead time removes the second of two close tags") {
  TagStreamBuilder b({"a"}, 1'000'000, false);
  b.add(0, 1000);
  b.add(0, 51000);
  b.add(0, 200000);
  DetectorModel m = DetectorModel::ideal();
  m.dead_time = 100e-9;
  const TagStream d = apply_detector(std::move(b).build(), m, 1);
  CHECK(d.timestamps() == std::vector<TimePs>{1000, 200000});
}

TEST_CASE("detector output is sorted and respects dead time") {
  const TagStream s = random_stream(5, 200000, false);
  DetectorModel m;
  m.efficiency = 0.8;
  m.dead_time = 20e-9;
  m.dark_rate = 1e4;
  const TagStream d = apply_detector(s, m, 9);
  CHECK_NOTHROW(d.validate());
  const TimePs dead = to_ps(m.dead_time);
  std::vector<TimePs> last(d.channel_count(), -1);
  bool ok = true;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto c = d.channels()[i];
    if (last[c] >= 0 && d.timestamps()[i] - last[c] < dead) ok = false;
    last[c] = d.timestamps()[i];
  }
  CHECK(ok);
}

TEST_CASE("jitter displacement has the configured FWHM") {
  TagStreamBuilder b({"a"}, 2'000'000'000'000, false);
  const std::size_t n = 1'000'000;
  for (std::size_t i = 0; i < n; ++i) b.add(0, 1'000'000 + static_cast<TimePs>(i) * 1'000'000);
  const TagStream s = std::move(b).build();
  DetectorModel m = DetectorModel::ideal();
  m.jitter_fwhm = 350e-12;
  const TagStream d = apply_detector(s, m, 4);
  REQUIRE(d.size() == n);
  double sum = 0, sum2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(d.timestamps()[i] - s.timestamps()[i]);
    sum += x;
    sum2 += x * x;
  }
  const double mean = sum / n;
  const double fwhm = std::sqrt(sum2 / n - mean * mean) * 2.0 * std::sqrt(2.0 * std::log(2.0));
  CHECK(fwhm == doctest::Approx(350.0).epsilon(0.05));
}

TEST_CASE("detector is deterministic") {
  const TagStream s = random_stream(8, 10000, true);
  DetectorModel m;
  m.dark_rate = 1e3;
  CHECK(apply_detector(s, m, 3) == apply_detector(s, m, 3));
  CHECK_FALSE(apply_detector(s, m, 3) == apply_detector(s, m, 4));
}

TEST_CASE("beam splitter keeps every tag and splits evenly") {
  const TagStream s = random_stream(2, 100000, true, 1);
  const TagStream out = beam_split(s, 5);
  CHECK(out.size() == s.size());
  CHECK(out.has_truth());
  const double a = static_cast<double>(out.count(0));
  CHECK(std::abs(a - 50000.0) < 4.0 * std::sqrt(25000.0));
}
