#include <doctest.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <string>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/gradcore/tensor.hpp"
#include "pmt/progressive/checkpoint.hpp"
#include "pmt/progressive/trainer.hpp"
#include "pmt/verify/verify.hpp"

using namespace pmt;
using namespace pmt::progressive;
namespace fs = std::filesystem;

namespace {

bool bitwise_equal(const ParamSet& a, const ParamSet& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto x = a[i].second.data(), y = b[i].second.data();
    if (a[i].first != b[i].first || x.size() != y.size()) return false;
    if (std::memcmp(x.data(), y.data(), x.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

fs::path temp_dir(const std::string& name) {
  const auto d = fs::temp_directory_path() / ("pmt_unit_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("learning-rate schedule") {
  TrainerConfig c;
  c.lr_decay_every = 2500;
  CHECK(lr_at(0, c) == 0.01);
  CHECK(lr_at(2499, c) == 0.01);
  CHECK(lr_at(2500, c) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(lr_at(5000, c) == doctest::Approx(0.0001).epsilon(1e-15));
  TrainerConfig d;  // default decay follows t_max
  CHECK(d.decay_every() == 2000L * 2500 / 6000);
  double prev = 1;
  for (long i = 0; i < 3000; i += 7) {
    CHECK(lr_at(i, d) <= prev);
    prev = lr_at(i, d);
  }
}

TEST_CASE("plf examples") {
  CHECK(plf_check(0.3, 0.2) == 1);
  CHECK(plf_check(0.3, 0.4) == 0);
  CHECK(plf_check(0.3, 0.3) == 1);
  const Tensor gt({1, 1, 1, 2}, {1.0f, 0.0f});
  const Tensor good({1, 1, 1, 2}, {0.9f, 0.1f}), bad({1, 1, 1, 2}, {0.2f, 0.8f});
  CHECK(plf_check(bad, good, gt) == 1);
  CHECK(plf_check(good, bad, gt) == 0);
  CHECK(plf_check(good, good, gt) == 1);
}

TEST_CASE("config validation") {
  TrainerConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.lead() == 20);
  c.labeled_per_batch = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.buffer_len_B = 21;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("buffer_len_B"), ConfigError);
  c = {};
  c.n_models = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.mode = Mode::kSupervisedBaseline;
  CHECK_NOTHROW(c.validate());
  CHECK(c.models() == 1);
  c = {};
  c.n_models = 3;
  c.buffer_len_B = 6;
  CHECK(c.lead() == 3);
  CHECK(parse_mode("mt_baseline") == Mode::kMtBaseline);
  CHECK_THROWS_AS(parse_mode("semi"), ConfigError);
  CHECK(trainer_config_from_json(to_json(c)).n_models == 3);
  CHECK_THROWS_AS(trainer_config_from_json({{"buffer_len", 4}}), ConfigError);
}

TEST_CASE("peers stay frozen during a phase") {
  auto mr = verify::mini_run(40);
  Trainer t(mr.setup, mr.data, mr.split);
  int phases = 0;
  while (!t.done() && phases < 4) {
    t.mutable_state().schedule.begin_phase();
    const int cpm = t.state().schedule.active();
    const int peer = 1 - cpm;
    const ParamSet s = t.state().pairs[peer].student.clone(false);
    const ParamSet te = t.state().pairs[peer].teacher.clone(false);
    const ParamSet own = t.state().pairs[cpm].student.clone(false);
    while (t.state().schedule.in_phase()) {
      CHECK(t.step().model == cpm);
    }
    CHECK(bitwise_equal(s, t.state().pairs[peer].student));
    CHECK(bitwise_equal(te, t.state().pairs[peer].teacher));
    CHECK_FALSE(bitwise_equal(own, t.state().pairs[cpm].student));
    ++phases;
  }
  CHECK(phases == 4);
}

TEST_CASE("baselines") {
  auto mr = verify::mini_run(12);
  SUBCASE("supervised reduces to ce + dice") {
    mr.setup.config.mode = Mode::kSupervisedBaseline;
    Trainer t(mr.setup, mr.data, mr.split);
    t.run();
    CHECK(t.state().pairs.size() == 1);
    CHECK(t.state().history.size() == 12);
    for (const auto& r : t.state().history) CHECK(r.loss.l_total == r.loss.l_ce + r.loss.l_dice);
  }
  SUBCASE("mean teacher keeps one model and its teacher term") {
    mr.setup.config.mode = Mode::kMtBaseline;
    Trainer t(mr.setup, mr.data, mr.split);
    t.run();
    CHECK(t.state().pairs.size() == 1);
    for (const auto& r : t.state().history) {
      CHECK(r.loss.l_aln == 0);
      CHECK(r.loss.l_u == 0);
      CHECK(r.loss.l_total == doctest::Approx(r.loss.l_ce + r.loss.l_dice + r.loss.lambda2_t * r.loss.l_t));
    }
  }
}

TEST_CASE("gating suite") {
  for (const auto& r : verify::gating_suite()) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
}

TEST_CASE("history csv") {
  auto mr = verify::mini_run(3);
  Trainer t(mr.setup, mr.data, mr.split);
  t.run();
  const std::string csv = history_csv(t.state().history);
  CHECK(csv.rfind(std::string(kHistoryHeader) + "\n0,0,0,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 6);
}

TEST_CASE("checkpoints") {
  const auto dir = temp_dir("ckpt");
  auto mr = verify::mini_run(24);
  Trainer a(mr.setup, mr.data, mr.split);
  for (int i = 0; i < 9; ++i) a.step();
  a.save_checkpoint(dir / "a.pmt");

  Trainer b(mr.setup, mr.data, mr.split);
  b.load_checkpoint(dir / "a.pmt");
  for (std::size_t p = 0; p < 2; ++p) {
    CHECK(bitwise_equal(a.state().pairs[p].student, b.state().pairs[p].student));
    CHECK(bitwise_equal(a.state().pairs[p].teacher, b.state().pairs[p].teacher));
  }
  CHECK(a.state().iters() == b.state().iters());
  CHECK(a.state().history == b.state().history);

  SUBCASE("resume continues bitwise") {
    a.run();
    b.run();
    CHECK(a.state().history == b.state().history);
    for (std::size_t p = 0; p < 2; ++p) {
      CHECK(bitwise_equal(a.state().pairs[p].student, b.state().pairs[p].student));
    }
  }
  SUBCASE("corruption, truncation and version") {
    auto bytes = read_file(dir / "a.pmt");
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_WITH_AS(decode_checkpoint(flipped, "x"), doctest::Contains("checksum"), FormatError);
    const std::vector<std::uint8_t> cut(bytes.begin(), bytes.begin() + bytes.size() / 3);
    CHECK_THROWS_AS(decode_checkpoint(cut, "x"), FormatError);
    CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(10), "x"), FormatError);
    auto v2 = bytes;
    v2[8] = 2;
    const auto crc = crc32_of(std::span(v2).first(v2.size() - 4));
    for (int k = 0; k < 4; ++k) v2[v2.size() - 4 + k] = static_cast<std::uint8_t>(crc >> (8 * k));
    CHECK_THROWS_WITH_AS(decode_checkpoint(v2, "x"), doctest::Contains("version"), FormatError);
    auto magic = bytes;
    magic[0] = 'Q';
    CHECK_THROWS_WITH_AS(decode_checkpoint(magic, "x"), doctest::Contains("magic"), FormatError);
  }
  SUBCASE("different config is rejected") {
    auto other = mr.setup;
    other.config.lr0 = 0.02;
    Trainer c(other, mr.data, mr.split);
    CHECK_THROWS_AS(c.load_checkpoint(dir / "a.pmt"), ConfigError);
  }
  fs::remove_all(dir);
}

TEST_CASE("determinism suite") {
  for (const auto& r : verify::determinism_suite()) CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
}

}
