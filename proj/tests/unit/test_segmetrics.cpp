#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/core/random.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/segmetrics/segmetrics.hpp"
#include "pmt/verify/verify.hpp"

using namespace pmt;
using namespace pmt::segmetrics;

namespace {

using Mask = std::vector<std::uint8_t>;

Mask rect(int h, int w, int y0, int x0, int rh, int rw) {
  Mask m(static_cast<std::size_t>(h * w), 0);
  for (int y = y0; y < y0 + rh; ++y) {
    for (int x = x0; x < x0 + rw; ++x) m[y * w + x] = 1;
  }
  return m;
}

MaskView view(const Mask& m, int h, int w) { return {m, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}; }

Mask random_mask(Rng& rng, int h, int w, double p) {
  Mask m(static_cast<std::size_t>(h * w));
  for (auto& v : m) v = uniform01(rng) < p;
  return m;
}

}  // namespace

TEST_SUITE("segmetrics") {

TEST_CASE("dice/jaccard examples") {
  const Mask a = rect(4, 4, 1, 1, 2, 2);
  CHECK(dice_jaccard(view(a, 4, 4), view(a, 4, 4)) == std::pair{1.0, 1.0});
  const Mask b = rect(4, 4, 0, 0, 1, 1);
  CHECK(dice_jaccard(view(a, 4, 4), view(b, 4, 4)) == std::pair{0.0, 0.0});
  const Mask c = rect(1, 3, 0, 0, 1, 2), d = rect(1, 3, 0, 1, 1, 2);
  const auto [dice, jac] = dice_jaccard(view(c, 1, 3), view(d, 1, 3));
  CHECK(dice == 0.5);
  CHECK(jac == doctest::Approx(1.0 / 3).epsilon(1e-15));
  const Mask z(9, 0);
  CHECK(dice_jaccard(view(z, 3, 3), view(z, 3, 3)) == std::pair{1.0, 1.0});
  CHECK_THROWS_AS(dice_jaccard(view(z, 3, 3), view(a, 4, 4)), ShapeError);
}

TEST_CASE("surface examples") {
  const Mask one = rect(5, 5, 2, 3, 1, 1);
  CHECK(surface(view(one, 5, 5)) == std::vector<Point>{{2, 3}});
  const Mask sq = rect(5, 5, 1, 1, 3, 3);
  const auto s = surface(view(sq, 5, 5));
  CHECK(s.size() == 8);
  CHECK(std::find(s.begin(), s.end(), Point{2, 2}) == s.end());
  const Mask full(16, 1);
  CHECK(surface(view(full, 4, 4)).size() == 12);  // the border ring
  CHECK_THROWS(surface(view(Mask(9, 0), 3, 3)));
}

TEST_CASE("hd95/asd examples") {
  const Mask a = rect(8, 8, 2, 2, 3, 3);
  const auto same = hd95_asd(view(a, 8, 8), view(a, 8, 8));
  CHECK(same.hd95 == 0);
  CHECK(same.asd == 0);
  const Mask p1 = rect(1, 8, 0, 1, 1, 1), p2 = rect(1, 8, 0, 4, 1, 1);
  const auto d = hd95_asd(view(p1, 1, 8), view(p2, 1, 8));
  CHECK(d.hd95 == 3);
  CHECK(d.asd == 3);
  const Mask s1 = rect(10, 10, 2, 2, 4, 4), s2 = rect(10, 10, 2, 3, 4, 4);
  const auto fast = hd95_asd(view(s1, 10, 10), view(s2, 10, 10));
  const auto slow = hd95_asd_bruteforce(view(s1, 10, 10), view(s2, 10, 10));
  CHECK(fast.hd95 == slow.hd95);
  CHECK(fast.asd == slow.asd);
  CHECK(fast.hd95 == 1);
  const auto pooled = pooled_surface_distances(view(s1, 10, 10), view(s2, 10, 10));
  CHECK(pooled.size() == 24);
}

TEST_CASE("percentile uses linear interpolation") {
  CHECK(percentile_linear({1, 2, 3, 4}, 0.5) == 2.5);
  CHECK(percentile_linear({0, 10}, 0.95) == doctest::Approx(9.5));
  CHECK(percentile_linear({5}, 0.95) == 5);
  CHECK(percentile_linear({3, 1, 2}, 1.0) == 3);
  CHECK_THROWS(percentile_linear({}, 0.5));
}

TEST_CASE("distance transform matches brute force") {
  Rng rng(12);
  for (int t = 0; t < 20; ++t) {
    const int h = 3 + static_cast<int>(uniform_index(rng, 9)), w = 3 + static_cast<int>(uniform_index(rng, 9));
    Mask m = random_mask(rng, h, w, 0.15);
    m[0] = 1;
    const auto dt = squared_distance_transform(view(m, h, w));
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        double best = 1e300;
        for (int yy = 0; yy < h; ++yy) {
          for (int xx = 0; xx < w; ++xx) {
            if (m[yy * w + xx]) best = std::min(best, double((y - yy) * (y - yy) + (x - xx) * (x - xx)));
          }
        }
        CHECK(dt[y * w + x] == best);
      }
    }
  }
}

TEST_CASE("oracle equivalence on 50 random 16x16 pairs") {
  const auto r = verify::metric_oracle(50);
  CHECK_MESSAGE(r.passed, r.detail);
}

TEST_CASE("symmetry, translation invariance and shift monotonicity") {
  Rng rng(21);
  for (int t = 0; t < 30; ++t) {
    Mask a = random_mask(rng, 12, 12, 0.3), b = random_mask(rng, 12, 12, 0.3);
    // keep the outer two rows/cols empty so a translation stays inside
    for (int y = 0; y < 12; ++y) {
      for (int x = 0; x < 12; ++x) {
        if (y < 2 || x < 2 || y > 9 || x > 9) a[y * 12 + x] = b[y * 12 + x] = 0;
      }
    }
    a[5 * 12 + 5] = b[6 * 12 + 6] = 1;
    const auto ab = hd95_asd(view(a, 12, 12), view(b, 12, 12));
    const auto ba = hd95_asd(view(b, 12, 12), view(a, 12, 12));
    CHECK(ab.hd95 == ba.hd95);
    CHECK(ab.asd == doctest::Approx(ba.asd).epsilon(1e-15));
    Mask as(144, 0), bs(144, 0);
    for (int y = 0; y < 11; ++y) {
      for (int x = 0; x < 11; ++x) {
        as[(y + 1) * 12 + x + 1] = a[y * 12 + x];
        bs[(y + 1) * 12 + x + 1] = b[y * 12 + x];
      }
    }
    const auto moved = hd95_asd(view(as, 12, 12), view(bs, 12, 12));
    CHECK(moved.hd95 == doctest::Approx(ab.hd95));
    CHECK(moved.asd == doctest::Approx(ab.asd));
    CHECK(dice_jaccard(view(as, 12, 12), view(bs, 12, 12)) == dice_jaccard(view(a, 12, 12), view(b, 12, 12)));
  }
  const Mask base = rect(16, 32, 4, 4, 6, 7);
  double prev = -1;
  for (int shift = 0; shift < 15; ++shift) {
    const Mask moved = rect(16, 32, 4, 4 + shift, 6, 7);
    const double asd = hd95_asd(view(base, 16, 32), view(moved, 16, 32)).asd;
    CHECK(asd >= prev);
    prev = asd;
  }
}

TEST_CASE("empty masks are flagged and excluded") {
  const Mask z(16, 0), a = rect(4, 4, 1, 1, 2, 2);
  const auto m = evaluate_sample(3, view(z, 4, 4), view(a, 4, 4));
  CHECK(m.flags == "empty_pred");
  CHECK(std::isnan(m.hd95));
  CHECK(m.dice == 0);
  CHECK(evaluate_sample(3, view(z, 4, 4), view(z, 4, 4)).flags == "empty_pred;empty_gt");
  const std::vector<double> v{1.0, NAN, 3.0};
  const auto agg = aggregate(v);
  CHECK(agg.mean == 2.0);
  CHECK(agg.std == doctest::Approx(std::sqrt(2.0)));
  CHECK(agg.n == 2);
  CHECK(agg.excluded == 1);
}

TEST_CASE("evaluate_run: oracle and constant predictors") {
  synthdata::DataGenConfig c;
  c.count = 10;
  c.height = 16;
  c.width = 16;
  const auto data = synthdata::generate(c);
  const std::vector<std::size_t> idx{0, 3, 7};
  EvalConfig eval;
  eval.batch_size = 2;

  // The predictor receives batches in index order; hand back the true masks.
  std::size_t next = 0;
  const SoftPredictor oracle = [&](const Tensor& x) {
    std::vector<float> out;
    for (std::size_t n = 0; n < x.dim(0); ++n, ++next) {
      const auto& m = data.samples[idx[next]].mask;
      out.insert(out.end(), m.begin(), m.end());
    }
    return Tensor({x.dim(0), 1, 16, 16}, out);
  };
  const auto perfect = evaluate_run(oracle, data, idx, eval);
  for (const auto& s : perfect.samples) {
    CHECK(s.dice == 1.0);
    CHECK(s.hd95 == 0.0);
    CHECK(s.asd == 0.0);
  }
  CHECK(perfect.dice.mean == 1.0);

  const SoftPredictor half = [](const Tensor& x) { return Tensor::full({x.dim(0), 1, x.dim(2), x.dim(3)}, 0.5f); };
  const auto flat = evaluate_run(half, data, idx, eval);
  CHECK(flat.samples.size() == 3);
  for (const auto& s : flat.samples) CHECK(s.flags == "empty_pred");
  CHECK(flat.hd95.n == 0);
  CHECK(flat.hd95.excluded == 3);

  SUBCASE("sliding window path") {
    EvalConfig sw = eval;
    sw.sliding = true;
    sw.window_h = 8;
    sw.window_w = 8;
    sw.stride_h = 4;
    sw.stride_w = 4;
    const auto r = evaluate_run(half, data, idx, sw);
    CHECK(r.samples.size() == 3);
  }
}

TEST_CASE("report csv and json") {
  MetricReport r;
  r.samples = {{4, 0.5, 1.0 / 3, 2.0, 1.5, ""}, {9, 0.0, 0.0, NAN, NAN, "empty_pred"}};
  const std::vector<double> d{0.5, 0.0}, h{2.0, NAN};
  r.dice = aggregate(d);
  r.jaccard = aggregate(d);
  r.hd95 = aggregate(h);
  r.asd = aggregate(h);
  r.config = {{"k", 1}};
  const std::string csv = r.to_csv();
  CHECK(csv.rfind("sample_id,dice,jaccard,hd95,asd,flags\n4,0.5,0.333333333,2,1.5,\n", 0) == 0);
  CHECK(csv.find("9,0,0,nan,nan,empty_pred\n") != std::string::npos);
  CHECK(csv.find("\nmetric,mean,std,n,excluded\n") != std::string::npos);
  CHECK(csv.find("hd95,2,0,1,1\n") != std::string::npos);
  const auto j = r.to_json();
  CHECK(j["samples"][1]["hd95"].is_null());
  CHECK(j["aggregate"]["dice"]["mean"] == 0.25);
  CHECK(j["config"]["k"] == 1);

  const auto dir = std::filesystem::temp_directory_path() / "pmt_unit_report";
  std::filesystem::create_directories(dir);
  r.write(dir / "r.csv");
  CHECK(read_text_file(dir / "r.csv") == csv);
  CHECK(nlohmann::json::parse(read_text_file(dir / "r.json")) == j);
  std::filesystem::remove_all(dir);
}

TEST_CASE("eval config") {
  EvalConfig e;
  CHECK_NOTHROW(e.validate());
  e.threshold = 1.0;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  e = {};
  e.stride_h = 0;
  CHECK_THROWS_AS(e.validate(), ConfigError);
  EvalConfig f;
  f.sliding = true;
  f.window_h = 8;
  CHECK(to_json(eval_config_from_json(to_json(f))) == to_json(f));
  CHECK_THROWS_AS(eval_config_from_json({{"thresh", 0.4}}), ConfigError);
}

}
