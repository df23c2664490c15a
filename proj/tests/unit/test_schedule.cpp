#include <doctest.h>

#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/progressive/schedule.hpp"
#include "pmt/verify/verify.hpp"

using namespace pmt;
using namespace pmt::progressive;

namespace {

BatchStream small_stream(std::uint64_t seed = 3) {
  return BatchStream({0, 1, 2, 3, 4}, {10, 11, 12, 13, 14, 15, 16}, 2, 2, seed);
}

struct Phase {
  int model;
  long first, last;  // consumed [first, last)
  std::vector<long> iters_after;
};

std::vector<Phase> simulate(Scheduler& s, const BatchStream& stream, int phases) {
  std::vector<Phase> out;
  for (int p = 0; p < phases && !s.done(); ++p) {
    s.begin_phase();
    Phase ph{s.active(), s.iters()[s.active()], 0, {}};
    for (bool ended = false; !ended;) {
      const Batch& b = s.fetch(stream);
      CHECK(b == stream.at(s.iters()[s.active()]));
      ended = s.advance();
    }
    ph.last = s.iters()[ph.model];
    ph.iters_after = s.iters();
    out.push_back(ph);
  }
  return out;
}

}  // namespace

TEST_SUITE("schedule") {

TEST_CASE("next_cpm examples") {
  CHECK(next_cpm(std::vector<long>{0, 0}) == 0);
  CHECK(next_cpm(std::vector<long>{40, 20}) == 1);
  CHECK(next_cpm(std::vector<long>{40, 60}) == 0);
  CHECK(next_cpm(std::vector<long>{7, 3, 3}) == 1);
}

TEST_CASE("two models, B=4: hand-simulated phases") {
  const auto stream = small_stream();
  Scheduler s(2, 4, 1000);
  const auto phases = simulate(s, stream, 3);
  REQUIRE(phases.size() == 3);
  CHECK(phases[0].model == 0);
  CHECK(phases[0].first == 0);
  CHECK(phases[0].last == 4);
  CHECK(phases[0].iters_after == std::vector<long>{4, 0});
  CHECK(phases[1].model == 1);
  CHECK(phases[1].first == 0);
  CHECK(phases[1].last == 8);
  CHECK(phases[1].iters_after == std::vector<long>{4, 8});
  CHECK(phases[2].model == 0);
  CHECK(phases[2].first == 4);
  CHECK(phases[2].last == 12);
  CHECK(phases[2].iters_after == std::vector<long>{12, 8});
  CHECK(s.round() == 3);
  CHECK(s.head() == 12);
  CHECK(s.buffer_front() == 8);
  CHECK(s.buffer_size() == 4);
}

TEST_CASE("later phases are 2B long and the gap stays B") {
  const auto stream = small_stream();
  Scheduler s(2, 20, 100000);
  const auto phases = simulate(s, stream, 25);
  for (std::size_t i = 1; i < phases.size(); ++i) {
    CHECK(phases[i].last - phases[i].first == 40);
    const auto& it = phases[i].iters_after;
    CHECK(std::abs(it[0] - it[1]) == 20);
    CHECK(phases[i].model != phases[i - 1].model);
  }
  CHECK(s.buffer_size() <= s.capacity());
}

TEST_CASE("three models keep sorted counters B/(n-1) apart") {
  const auto stream = small_stream();
  Scheduler s(3, 3, 100000);  // B = 6
  const auto phases = simulate(s, stream, 30);
  for (std::size_t i = 2; i < phases.size(); ++i) {
    CHECK(Scheduler::gaps_equal(phases[i].iters_after, 3));
  }
}

TEST_CASE("truncated final phase stops every model at t_max") {
  const auto stream = small_stream();
  Scheduler s(2, 4, 10);
  simulate(s, stream, 100);
  CHECK(s.done());
  CHECK(s.iters() == std::vector<long>{10, 10});
}

TEST_CASE("simulation suite") {
  for (const auto& r : verify::schedule_suite()) {
    CHECK_MESSAGE(r.passed, r.name << ": " << r.detail);
  }
}

TEST_CASE("batch stream") {
  const auto a = small_stream(3), b = small_stream(3), c = small_stream(4);
  bool differs = false;
  for (long i = 0; i < 30; ++i) {
    CHECK(a.at(i) == b.at(i));
    CHECK(a.at(i).labeled.size() == 2);
    CHECK(a.at(i).unlabeled.size() == 2);
    differs = differs || !(a.at(i) == c.at(i));
  }
  CHECK(differs);
  // each labeled epoch is a permutation of the pool
  std::vector<int> seen(5, 0);
  for (long i = 0; i < 5; ++i) {
    for (std::size_t id : a.at(i).labeled) ++seen[id];
  }
  CHECK(seen == std::vector<int>{2, 2, 2, 2, 2});

  const BatchStream fallback({0, 1, 2}, {}, 1, 3, 9);
  for (long i = 0; i < 10; ++i) {
    for (std::size_t id : fallback.at(i).unlabeled) CHECK(id < 3);
  }
  CHECK_THROWS_AS(BatchStream({}, {1}, 1, 1, 0), ConfigError);
  CHECK_THROWS_AS(a.at(-1), Error);
}

TEST_CASE("buffer underflow and skipped indices abort") {
  const auto stream = small_stream();
  Scheduler s(2, 4, 100);
  Scheduler::Snapshot under{{0, 4}, 4, 1, 0, 8, 2, false};
  s.restore(under, stream);
  CHECK_THROWS_AS(s.fetch(stream), InvariantError);
  Scheduler::Snapshot skip{{6, 0}, 4, 1, 0, 8, 0, false};
  s.restore(skip, stream);
  CHECK_THROWS_AS(s.fetch(stream), InvariantError);
  Scheduler idle(2, 4, 100);
  CHECK_THROWS_AS(idle.fetch(stream), InvariantError);
  CHECK_THROWS_AS(idle.advance(), InvariantError);
  CHECK_THROWS_AS(Scheduler(2, 0, 10), ConfigError);
}

TEST_CASE("snapshot and restore continue identically") {
  const auto stream = small_stream();
  Scheduler a(2, 4, 60);
  for (int i = 0; i < 13; ++i) {
    a.begin_phase();
    a.fetch(stream);
    a.advance();
  }
  Scheduler b(2, 4, 60);
  b.restore(a.snapshot(), stream);
  CHECK(b.buffer_size() == a.buffer_size());
  while (!a.done()) {
    a.begin_phase();
    b.begin_phase();
    REQUIRE(a.active() == b.active());
    CHECK(a.fetch(stream) == b.fetch(stream));
    CHECK(a.advance() == b.advance());
  }
  CHECK(b.done());
  CHECK(a.iters() == b.iters());
  CHECK(a.round() == b.round());
}

}
