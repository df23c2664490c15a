#include <doctest.h>

#include <cmath>
#include <vector>

#include "pmt/core/random.hpp"
#include "pmt/gradcore/kernels.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/segnet/segnet.hpp"

using namespace pmt;
using kernels::Backend;

namespace {

std::vector<float> randv(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(uniform(rng, -2, 2));
  return v;
}

void check_close(const std::vector<float>& a, const std::vector<float>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    INFO("index " << i);
    CHECK(std::abs(a[i] - b[i]) <= tol * std::max(1.0f, std::abs(a[i])));
  }
}

const std::size_t kSizes[] = {0, 1, 3, 7, 8, 9, 16, 31, 100, 1027};

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("scalar and avx2 elementwise kernels agree") {
  const auto* v = kernels::avx2_table();
  if (!v) {
    MESSAGE("AVX2 not available; equivalence not exercised");
    return;
  }
  const auto& s = kernels::scalar_table<float>();
  for (std::size_t n : kSizes) {
    CAPTURE(n);
    const auto a = randv(n, 1 + n), b = randv(n, 100 + n);
    auto run2 = [&](auto fs, auto fv) {
      std::vector<float> o1(n), o2(n);
      fs(a.data(), b.data(), o1.data(), n);
      fv(a.data(), b.data(), o2.data(), n);
      check_close(o1, o2, 1e-6);
    };
    run2(s.add, v->add);
    run2(s.sub, v->sub);
    run2(s.mul, v->mul);
    {
      std::vector<float> o1(n), o2(n);
      s.scale(a.data(), 1.7f, o1.data(), n);
      v->scale(a.data(), 1.7f, o2.data(), n);
      check_close(o1, o2, 1e-6);
    }
    {
      std::vector<float> y1 = b, y2 = b;
      s.axpy(0.3f, a.data(), y1.data(), n);
      v->axpy(0.3f, a.data(), y2.data(), n);
      check_close(y1, y2, 1e-6);
      s.mul_acc(a.data(), b.data(), y1.data(), n);
      v->mul_acc(a.data(), b.data(), y2.data(), n);
      check_close(y1, y2, 1e-6);
    }
    {
      std::vector<float> o1(n), o2(n), g1 = b, g2 = b;
      s.relu(a.data(), o1.data(), n);
      v->relu(a.data(), o2.data(), n);
      CHECK(o1 == o2);
      s.relu_backward(a.data(), b.data(), g1.data(), n);
      v->relu_backward(a.data(), b.data(), g2.data(), n);
      CHECK(g1 == g2);
    }
    CHECK(s.sum(a.data(), n) == doctest::Approx(v->sum(a.data(), n)).epsilon(1e-9));
    CHECK(s.dot(a.data(), b.data(), n) == doctest::Approx(v->dot(a.data(), b.data(), n)).epsilon(1e-9));
    CHECK(s.all_finite(a.data(), n) == v->all_finite(a.data(), n));
    if (n > 0) {
      auto bad = a;
      bad[n / 2] = std::nanf("");
      CHECK_FALSE(s.all_finite(bad.data(), n));
      CHECK_FALSE(v->all_finite(bad.data(), n));
      bad[n / 2] = INFINITY;
      CHECK_FALSE(v->all_finite(bad.data(), n));
    }
    {
      std::vector<float> t1 = a, t2 = a, v1 = b, v2 = b;
      const auto g = randv(n, 7 + n);
      s.sgd_update(t1.data(), v1.data(), g.data(), n, 0.01f, 0.9f, 1e-4f);
      v->sgd_update(t2.data(), v2.data(), g.data(), n, 0.01f, 0.9f, 1e-4f);
      check_close(t1, t2, 1e-6);
      check_close(v1, v2, 1e-6);
      s.ema_update(t1.data(), g.data(), n, 0.99f);
      v->ema_update(t2.data(), g.data(), n, 0.99f);
      check_close(t1, t2, 1e-6);
    }
  }
}

TEST_CASE("scalar and avx2 gemm/corr row kernels agree") {
  const auto* v = kernels::avx2_table();
  if (!v) return;
  const auto& s = kernels::scalar_table<float>();
  for (std::size_t m : {1u, 3u, 8u}) {
    for (std::size_t n : {1u, 5u, 8u, 17u, 64u}) {
      for (std::size_t k : {1u, 4u, 9u, 27u}) {
        CAPTURE(m);
        CAPTURE(n);
        CAPTURE(k);
        const auto a = randv(m * k, 3), data = randv(k * n, 4);
        std::vector<const float*> rows(k);
        for (std::size_t p = 0; p < k; ++p) rows[p] = data.data() + p * n;
        std::vector<float> c1 = randv(m * n, 5), c2 = c1;
        s.gemm_rows(m, n, k, a.data(), k, rows.data(), c1.data(), n);
        v->gemm_rows(m, n, k, a.data(), k, rows.data(), c2.data(), n);
        check_close(c1, c2, 1e-5);

        // corr_rows with nr row blocks of width n
        const std::size_t nr = 2;
        const auto g = randv(m * nr * n, 6);
        const auto src = randv(nr * k * n, 8);
        std::vector<const float*> crow(nr * k);
        for (std::size_t i = 0; i < nr * k; ++i) crow[i] = src.data() + i * n;
        std::vector<float> w1(m * k, 0.5f), w2 = w1;
        s.corr_rows(m, k, nr, n, g.data(), nr * n, n, crow.data(), w1.data());
        v->corr_rows(m, k, nr, n, g.data(), nr * n, n, crow.data(), w2.data());
        check_close(w1, w2, 1e-5);
      }
    }
  }
}

TEST_CASE("network forward and backward agree across backends") {
  if (!kernels::avx2_available()) return;
  const segnet::SegNetConfig cfg{1, 4, 2, 1};
  const Tensor x({2, 1, 16, 16}, randv(512, 9));
  auto run = [&](Backend b) {
    kernels::ScopedBackend scope(b);
    auto params = segnet::init_params<float>(cfg, 3);
    const Tensor y = segnet::forward(cfg, params, x);
    mean(y).backward();
    std::vector<float> out(y.data().begin(), y.data().end());
    std::vector<float> grads;
    for (const auto& [name, t] : params) grads.insert(grads.end(), t.grad().begin(), t.grad().end());
    return std::pair{out, grads};
  };
  const auto [ys, gs] = run(Backend::kScalar);
  const auto [yv, gv] = run(Backend::kAvx2);
  check_close(ys, yv, 1e-5);
  double scale = 0;
  for (float g : gs) scale = std::max(scale, static_cast<double>(std::abs(g)));
  for (std::size_t i = 0; i < gs.size(); ++i) CHECK(std::abs(gs[i] - gv[i]) <= 1e-4 * scale);
}

TEST_CASE("each backend is bitwise reproducible") {
  const segnet::SegNetConfig cfg{1, 4, 1, 1};
  const Tensor x({1, 1, 8, 8}, randv(64, 2));
  for (Backend b : {Backend::kScalar, Backend::kAvx2}) {
    if (b == Backend::kAvx2 && !kernels::avx2_available()) continue;
    kernels::ScopedBackend scope(b);
    const auto p = segnet::init_params<float>(cfg, 1);
    const Tensor y1 = segnet::forward(cfg, p, x);
    const Tensor y2 = segnet::forward(cfg, p, x);
    CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
  }
}

TEST_CASE("backend selection") {
  CHECK(kernels::backend_name(Backend::kScalar) == "scalar");
  CHECK(kernels::active<double>().backend == Backend::kScalar);
  {
    kernels::ScopedBackend scope(Backend::kScalar);
    CHECK(kernels::current_backend() == Backend::kScalar);
    CHECK(kernels::active<float>().backend == Backend::kScalar);
  }
  if (!kernels::avx2_available()) CHECK_THROWS(kernels::set_backend(Backend::kAvx2));
}

}
