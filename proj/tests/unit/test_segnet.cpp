#include <doctest.h>

#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/core/random.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/segnet/model_pair.hpp"
#include "pmt/segnet/segnet.hpp"

using namespace pmt;
using namespace pmt::segnet;

namespace {

Tensor random_image(std::size_t n, std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n * h * w);
  for (auto& x : v) x = static_cast<float>(normal01(rng));
  return Tensor({n, 1, h, w}, v);
}

std::size_t conv(std::size_t a, std::size_t b, std::size_t k) { return a * b * k * k + b; }

}  // namespace

TEST_SUITE("segnet") {

TEST_CASE("parameter count matches the closed form") {
  const SegNetConfig d;
  // enc0, enc1, enc2, dec1, dec0, head for f = 8, 16, 32
  const std::size_t expected = conv(1, 8, 3) + conv(8, 8, 3) + conv(8, 16, 3) + conv(16, 16, 3) +
                               conv(16, 32, 3) + conv(32, 32, 3) + conv(48, 16, 3) +
                               conv(16, 16, 3) + conv(24, 8, 3) + conv(8, 8, 3) + conv(8, 1, 1);
  CHECK(expected == 29617);
  CHECK(parameter_count(d) == expected);
  CHECK(init_params<float>(d, 0).scalar_count() == expected);
  CHECK(parameter_count(d) < 100000);
  const SegNetConfig small{1, 2, 1, 1};
  CHECK(parameter_count(small) == init_params<float>(small, 0).scalar_count());
}

TEST_CASE("config validation") {
  SegNetConfig c;
  c.depth = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.base_filters = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("forward: shape, range and indivisible input") {
  const ModelPair pair = ModelPair::create(SegNetConfig{}, 1, 0);
  const Tensor x = random_image(2, 16, 12, 3);
  const Tensor y = forward(pair, Branch::kStudent, x, false);
  CHECK(y.shape() == Shape{2, 1, 16, 12});
  for (float v : y.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
  CHECK_THROWS_AS(forward(pair, Branch::kStudent, random_image(1, 10, 12, 1), false), ShapeError);
}

TEST_CASE("fresh pair: teacher is an exact copy") {
  const ModelPair pair = ModelPair::create(SegNetConfig{}, 5, 0);
  CHECK(pair.student.same_layout(pair.teacher));
  const Tensor x = random_image(1, 16, 16, 4);
  const Tensor s = forward(pair, Branch::kStudent, x, false);
  const Tensor t = forward(pair, Branch::kTeacher, x, false);
  CHECK(std::equal(s.data().begin(), s.data().end(), t.data().begin()));
}

TEST_CASE("teacher forward records no gradients") {
  ModelPair pair = ModelPair::create(SegNetConfig{1, 2, 1, 1}, 5, 0);
  const Tensor x = random_image(1, 8, 8, 4);
  const Tensor t = forward(pair, Branch::kTeacher, x, true);
  CHECK_FALSE(t.requires_grad());
  const Tensor s = forward(pair, Branch::kStudent, x, true);
  mean(mul(s, t)).backward();
  for (const auto& [name, p] : pair.teacher) CHECK_FALSE(p.has_grad());
  for (const auto& [name, p] : pair.student) CHECK(p.has_grad());
}

TEST_CASE("ema examples") {
  auto pair_with = [](float teacher, float student, double alpha) {
    ModelPair p;
    p.ema_alpha = alpha;
    p.student.add("w", Tensor({1}, {student}, true));
    p.teacher.add("w", Tensor({1}, {teacher}));
    return p;
  };
  ModelPair a = pair_with(1.0f, 0.0f, 0.99);
  ema_update(a);
  CHECK(a.teacher[0].second.data()[0] == doctest::Approx(0.99).epsilon(1e-7));
  ModelPair b = pair_with(0.3f, 0.7f, 1.0);
  ema_update(b);
  CHECK(b.teacher[0].second.data()[0] == 0.3f);
  ModelPair c = pair_with(0.3f, 0.7f, 0.0);
  ema_update(c);
  CHECK(c.teacher[0].second.data()[0] == 0.7f);

  ModelPair bad = pair_with(0, 0, 0.5);
  bad.student.add("extra", Tensor({1}, {1}, true));
  CHECK_THROWS(ema_update(bad));
}

TEST_CASE("ema k-step closed form") {
  ModelPair p = ModelPair::create(SegNetConfig{1, 2, 1, 1}, 1, 0, 0.95);
  p.teacher = init_params<float>(p.config, 77).clone(false);
  const ParamSet t0 = p.teacher.clone(false);
  for (int i = 0; i < 20; ++i) ema_update(p);
  const double ak = std::pow(0.95, 20);
  for (std::size_t i = 0; i < t0.size(); ++i) {
    for (std::size_t k = 0; k < t0[i].second.numel(); ++k) {
      const double expect = ak * t0[i].second.data()[k] + (1 - ak) * p.student[i].second.data()[k];
      CHECK(std::abs(p.teacher[i].second.data()[k] - expect) < 1e-6);
    }
  }
}

TEST_CASE("averaged inference") {
  std::vector<ModelPair> pairs{ModelPair::create(SegNetConfig{1, 2, 1, 1}, 1, 0)};
  const Tensor x = random_image(2, 8, 8, 9);
  const Tensor single = forward(pairs[0], Branch::kStudent, x, false);
  const auto one = infer_averaged(pairs, x);
  CHECK(std::equal(single.data().begin(), single.data().end(), one.soft.data().begin()));

  pairs.push_back(pairs[0]);
  const auto two = infer_averaged(pairs, x);
  for (std::size_t i = 0; i < single.numel(); ++i) {
    CHECK(two.soft.data()[i] == doctest::Approx(single.data()[i]).epsilon(1e-7));
    CHECK(two.mask.data()[i] == (two.soft.data()[i] > 0.5f ? 1.0f : 0.0f));
  }
  CHECK_THROWS(infer_averaged(std::span<const ModelPair>(), x));

  // 0.4 and 0.8 average to 0.6: foreground at 0.5. A lone bias in the 1x1
  // head fixes each network's output to a constant.
  auto constant_pair = [](float p) {
    ModelPair m = ModelPair::create(SegNetConfig{1, 1, 1, 1}, 2, 0);
    for (auto& [name, t] : m.student) {
      auto v = t.mutable_data();
      std::fill(v.begin(), v.end(), 0.0f);
    }
    m.student.find("head.bias")->mutable_data()[0] = std::log(p / (1 - p));
    return m;
  };
  std::vector<ModelPair> const_pairs{constant_pair(0.4f), constant_pair(0.8f)};
  const auto avg = infer_averaged(const_pairs, random_image(1, 4, 4, 1));
  CHECK(avg.soft.data()[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(avg.mask.data()[0] == 1.0f);
}

TEST_CASE("window origins cover the extent") {
  CHECK(window_origins(4, 2, 2) == std::vector<std::size_t>{0, 2});
  CHECK(window_origins(5, 2, 2) == std::vector<std::size_t>{0, 2, 3});
  CHECK(window_origins(4, 4, 3) == std::vector<std::size_t>{0});
  for (std::size_t extent = 1; extent < 12; ++extent) {
    for (std::size_t win = 1; win <= extent; ++win) {
      for (std::size_t stride = 1; stride < 6; ++stride) {
        std::vector<int> covered(extent, 0);
        for (std::size_t o : window_origins(extent, win, stride)) {
          for (std::size_t i = o; i < o + win; ++i) ++covered[i];
        }
        for (int c : covered) CHECK(c >= 1);
      }
    }
  }
  CHECK_THROWS_AS(window_origins(3, 4, 1), ShapeError);
  CHECK_THROWS_AS(window_origins(3, 2, 0), ShapeError);
}

TEST_CASE("sliding window bookkeeping") {
  // Each window predicts a constant equal to 1 + its call index.
  auto counting = [] {
    auto calls = std::make_shared<int>(0);
    return [calls](const Tensor& crop) {
      const float v = static_cast<float>(++*calls);
      return Tensor::full(crop.shape(), v);
    };
  };
  SUBCASE("4x2 image, window 2x2, stride 2x1: two disjoint windows") {
    const Tensor img = Tensor::zeros({4, 2});
    const Tensor out = sliding_window(img, {2, 2}, {2, 1}, counting());
    CHECK(std::vector<float>(out.data().begin(), out.data().end()) ==
          std::vector<float>{1, 1, 1, 1, 2, 2, 2, 2});
  }
  SUBCASE("2x4 image, window 2x2, stride 2x1: three overlapping windows") {
    const Tensor img = Tensor::zeros({2, 4});
    const Tensor out = sliding_window(img, {2, 2}, {2, 1}, counting());
    // columns covered by windows {1}, {1,2}, {2,3}, {3}
    CHECK(std::vector<float>(out.data().begin(), out.data().end()) ==
          std::vector<float>{1, 1.5f, 2.5f, 3, 1, 1.5f, 2.5f, 3});
  }
  SUBCASE("3x2 image, window 2x2, stride 2x1: clamped last window overlaps") {
    const Tensor img = Tensor::zeros({3, 2});
    const Tensor out = sliding_window(img, {2, 2}, {2, 1}, counting());
    CHECK(std::vector<float>(out.data().begin(), out.data().end()) ==
          std::vector<float>{1, 1, 1.5f, 1.5f, 2, 2});
  }
  CHECK_THROWS_AS(sliding_window(Tensor::zeros({2, 2}), {3, 2}, {1, 1}, counting()), ShapeError);
}

TEST_CASE("sliding inference with a full-size window equals averaged inference") {
  std::vector<ModelPair> pairs{ModelPair::create(SegNetConfig{1, 2, 1, 1}, 1, 0),
                               ModelPair::create(SegNetConfig{1, 2, 1, 1}, 2, 1)};
  const Tensor x = random_image(1, 8, 8, 5);
  const Tensor img = reshape(x, {8, 8});
  const Tensor slid = infer_sliding(pairs, img, {8, 8}, {4, 4});
  const Tensor full = infer_averaged(pairs, x).soft;
  CHECK(std::equal(slid.data().begin(), slid.data().end(), full.data().begin()));

  // Constant network: constant map regardless of stride.
  std::vector<ModelPair> zero{ModelPair::create(SegNetConfig{1, 1, 1, 1}, 3, 0)};
  for (auto& [name, t] : zero[0].student) {
    auto v = t.mutable_data();
    std::fill(v.begin(), v.end(), 0.0f);
  }
  for (std::size_t stride : {1u, 2u, 3u}) {
    const Tensor m = infer_sliding(zero, img, {4, 4}, {stride, stride});
    for (float v : m.data()) CHECK(v == 0.5f);
  }
}

}
