#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/synthdata/synthdata.hpp"

using namespace pmt;
using namespace pmt::synthdata;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("pmt_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

DataGenConfig small_config() {
  DataGenConfig c;
  c.count = 12;
  c.height = 32;
  c.width = 24;
  c.seed = 9;
  return c;
}

}  // namespace

TEST_SUITE("synthdata") {

TEST_CASE("samples are pure functions of (seed, id)") {
  const DataGenConfig c = small_config();
  const Sample a = generate_sample(c, 5), b = generate_sample(c, 5);
  CHECK(a.image == b.image);
  CHECK(a.mask == b.mask);
  // independent of generation order
  const Dataset d = generate(c);
  CHECK(d.samples[5].image == a.image);
  CHECK(d.samples[5].sample_id == 5);
  DataGenConfig other = c;
  other.seed = 10;
  CHECK(generate_sample(other, 5).image != a.image);
}

TEST_CASE("noise-free, bias-free images have exactly two raw intensities") {
  DataGenConfig c = small_config();
  c.noise_sigma = 0;
  c.bias_field_amp = 0;
  std::vector<double> raw;
  const Sample s = generate_sample(c, 3, &raw);
  std::set<double> levels(raw.begin(), raw.end());
  CHECK(levels == std::set<double>{kOutsideIntensity, kInsideIntensity});
  for (std::size_t i = 0; i < raw.size(); ++i) {
    CHECK(raw[i] == (s.mask[i] ? static_cast<double>(kInsideIntensity) : static_cast<double>(kOutsideIntensity)));
  }
}

TEST_CASE("default sweep: foreground fractions and standardization") {
  DataGenConfig c;  // 200 samples of 64x64
  const Dataset d = generate(c);
  REQUIRE(d.samples.size() == 200);
  for (const Sample& s : d.samples) {
    CAPTURE(s.sample_id);
    const double f = s.foreground_fraction();
    CHECK(f >= kMinForeground);
    CHECK(f <= kMaxForeground);
    double mean = 0, var = 0;
    for (float v : s.image) {
      CHECK(std::isfinite(v));
      mean += v;
    }
    mean /= s.image.size();
    for (float v : s.image) var += (v - mean) * (v - mean);
    var /= s.image.size();
    CHECK(std::abs(mean) < 1e-6);
    CHECK(std::abs(var - 1) < 1e-6);
    for (auto m : s.mask) CHECK(m <= 1);
  }
}

TEST_CASE("split arithmetic and partition") {
  const Split s = split(100, 0.1, 4);
  CHECK(s.labeled.size() == 8);
  CHECK(s.unlabeled.size() == 72);
  CHECK(s.test.size() == 20);
  std::set<std::size_t> all;
  for (auto* v : {&s.labeled, &s.unlabeled, &s.test}) {
    CHECK(std::is_sorted(v->begin(), v->end()));
    all.insert(v->begin(), v->end());
  }
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);

  const Split again = split(100, 0.1, 4);
  CHECK(again.labeled == s.labeled);
  CHECK(again.unlabeled == s.unlabeled);
  CHECK(again.test == s.test);
  CHECK(split(100, 0.1, 5).test != s.test);

  const Split full = split(100, 1.0, 4);
  CHECK(full.labeled.size() == 80);
  CHECK(full.unlabeled.empty());

  CHECK_THROWS_AS(split(10, 0.01, 0), ConfigError);  // round(0.08) = 0 labeled
  CHECK_THROWS_AS(split(100, 0.0, 0), ConfigError);
  CHECK_THROWS_AS(split(100, 1.5, 0), ConfigError);
}

TEST_CASE("split marks labeled samples") {
  Dataset d = generate(small_config());
  const Split s = split(d, 0.5, 1);
  std::size_t marked = 0;
  for (const Sample& x : d.samples) marked += x.is_labeled;
  CHECK(marked == s.labeled.size());
  for (auto i : s.labeled) CHECK(d.samples[i].is_labeled);
}

TEST_CASE("config validation") {
  DataGenConfig c;
  CHECK_NOTHROW(c.validate(4));
  c.height = 62;
  CHECK_THROWS_AS(c.validate(4), ConfigError);
  c = {};
  c.count = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.labeled_fraction = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.noise_sigma = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("SEGV1 sample round-trip") {
  const Sample s = generate_sample(small_config(), 2);
  const auto bytes = encode_sample(s);
  CHECK(bytes.size() == 5 + 4 + 4 + s.image.size() * 5);
  const Sample back = decode_sample(bytes, "mem");
  CHECK(back.height == s.height);
  CHECK(back.width == s.width);
  CHECK(back.image == s.image);
  CHECK(back.mask == s.mask);
}

TEST_CASE("hand-built 2x2 SEGV1 fixture") {
  std::vector<std::uint8_t> f = {'S', 'E', 'G', 'V', '1', 2, 0, 0, 0, 2, 0, 0, 0};
  const float img[4] = {1.0f, -2.5f, 0.25f, 3.0f};
  // little-endian f32 bytes written by hand
  const std::uint8_t img_bytes[16] = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x20, 0xc0,
                                      0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x40, 0x40};
  f.insert(f.end(), img_bytes, img_bytes + 16);
  f.insert(f.end(), {1, 0, 0, 1});
  const Sample s = decode_sample(f, "fixture");
  CHECK(s.height == 2);
  CHECK(s.width == 2);
  for (int i = 0; i < 4; ++i) CHECK(s.image[i] == img[i]);
  CHECK(s.mask == std::vector<std::uint8_t>{1, 0, 0, 1});

  SUBCASE("bad magic") {
    auto g = f;
    g[4] = '2';
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
  }
  SUBCASE("truncation") {
    auto g = f;
    g.pop_back();
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
    CHECK_THROWS_AS(decode_sample(std::span(f).first(3), "x"), FormatError);
  }
  SUBCASE("trailing bytes") {
    auto g = f;
    g.push_back(0);
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
  }
  SUBCASE("dimension overflow") {
    auto g = f;
    g[5] = g[6] = g[7] = g[8] = 0xff;
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
    g[5] = g[6] = g[7] = g[8] = 0;
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
  }
  SUBCASE("mask values other than 0/1") {
    auto g = f;
    g.back() = 2;
    CHECK_THROWS_AS(decode_sample(g, "x"), FormatError);
  }
}

TEST_CASE("dataset directory round-trip") {
  Dataset d = generate(small_config());
  const fs::path dir = scratch("dataset");
  write_dataset(d, dir);
  CHECK(fs::exists(dir / "meta.json"));
  const Dataset back = read_dataset(dir);
  REQUIRE(back.samples.size() == d.samples.size());
  for (std::size_t i = 0; i < d.samples.size(); ++i) {
    CHECK(back.samples[i].sample_id == d.samples[i].sample_id);
    CHECK(back.samples[i].image == d.samples[i].image);
    CHECK(back.samples[i].mask == d.samples[i].mask);
  }
  CHECK(to_json(back.config) == to_json(d.config));

  // a foreign sample file is a typed error
  write_text_file(dir / "sample_00000.segv1", "not a sample");
  CHECK_THROWS_AS(read_dataset(dir), FormatError);
  CHECK_THROWS(read_dataset(dir / "missing"));
  fs::remove_all(dir);
}

TEST_CASE("data config json") {
  DataGenConfig c = small_config();
  c.noise_sigma = 0.3;
  const DataGenConfig back = data_config_from_json(to_json(c));
  CHECK(to_json(back) == to_json(c));
  CHECK_THROWS_AS(data_config_from_json({{"colour", 1}}), ConfigError);
  CHECK_THROWS_AS(data_config_from_json({{"count", "many"}}), ConfigError);
}

}
