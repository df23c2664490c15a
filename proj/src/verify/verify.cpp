#include "pmt/verify/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "pmt/core/error.hpp"
#include "pmt/core/random.hpp"
#include "pmt/gradcore/ops.hpp"
#include "pmt/losses/losses.hpp"
#include "pmt/progressive/schedule.hpp"
#include "pmt/segmetrics/segmetrics.hpp"
#include "pmt/segnet/model_pair.hpp"
#include "pmt/segnet/segnet.hpp"

namespace pmt::verify {
namespace {

using Inputs = std::vector<TensorD>;

TensorD random_tensor(Rng& rng, Shape shape, double lo, double hi) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = uniform(rng, lo, hi);
  return TensorD(std::move(shape), std::move(v));
}

// Values in [lo, hi] at least `gap` away from every point in `avoid`.
TensorD random_avoiding(Rng& rng, Shape shape, double lo, double hi,
                        std::initializer_list<double> avoid, double gap) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    bool ok;
    do {
      x = uniform(rng, lo, hi);
      ok = true;
      for (double a : avoid) ok = ok && std::abs(x - a) >= gap;
    } while (!ok);
  }
  return TensorD(std::move(shape), std::move(v));
}

// Distinct values spaced at least 0.01 apart (no max-pool ties).
TensorD random_distinct(Rng& rng, Shape shape) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v(n);
  std::iota(v.begin(), v.end(), 0.0);
  shuffle(v, rng);
  for (double& x : v) x = (x - n / 2.0) * 0.05 + uniform(rng, 0.0, 0.03);
  return TensorD(std::move(shape), std::move(v));
}

TensorD random_mask(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = uniform01(rng) < 0.5 ? 1.0 : 0.0;
  return TensorD(std::move(shape), std::move(v));
}

Shape random_shape(Rng& rng) {
  Shape s{1 + uniform_index(rng, 2), 1 + uniform_index(rng, 3), 2 + uniform_index(rng, 3)};
  return s;
}

Shape random_image_shape(Rng& rng, std::size_t multiple) {
  const std::size_t h = multiple * (1 + uniform_index(rng, 3));
  const std::size_t w = multiple * (1 + uniform_index(rng, 3));
  return {1 + uniform_index(rng, 2), 1 + uniform_index(rng, 2), h, w};
}

double weighted_sum(const TensorD& out, const std::vector<double>& r) {
  double s = 0;
  for (std::size_t i = 0; i < r.size(); ++i) s += out.data()[i] * r[i];
  return s;
}

GradCase unary(std::string name, TensorD a, std::function<TensorD(const TensorD&)> f) {
  return {std::move(name), {std::move(a)}, [f](const Inputs& in) { return f(in[0]); }};
}

GradCase binary(std::string name, TensorD a, TensorD b,
                std::function<TensorD(const TensorD&, const TensorD&)> f) {
  return {std::move(name), {std::move(a), std::move(b)},
          [f](const Inputs& in) { return f(in[0], in[1]); }};
}

CheckResult make_result(std::string name, bool passed, std::string detail, double value = 0) {
  return {std::move(name), passed, std::move(detail), value};
}

std::vector<std::uint8_t> random_blob_mask(Rng& rng, int h, int w) {
  std::vector<std::uint8_t> m(static_cast<std::size_t>(h * w), 0);
  const int blobs = 1 + static_cast<int>(uniform_index(rng, 3));
  for (int b = 0; b < blobs; ++b) {
    const double cy = uniform(rng, 0, h), cx = uniform(rng, 0, w);
    const double ry = uniform(rng, 1.0, h / 3.0), rx = uniform(rng, 1.0, w / 3.0);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double dy = (y - cy) / ry, dx = (x - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) m[y * w + x] = 1;
      }
    }
  }
  // scattered noise pixels make the surfaces irregular
  const int specks = static_cast<int>(uniform_index(rng, 8));
  for (int s = 0; s < specks; ++s) m[uniform_index(rng, m.size())] ^= 1;
  return m;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

bool any_set(const std::vector<std::uint8_t>& m) {
  return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
  return std::abs(analytic - numeric) / denom;
}

double gradient_error(const GradCase& c, std::uint64_t seed, double h) {
  Inputs leaves;
  for (const auto& t : c.inputs) {
    TensorD l = t.detach();
    l.set_requires_grad(true);
    leaves.push_back(l);
  }
  const TensorD out = c.fn(leaves);
  Rng rng(mix_seed(seed, 0x6f0d));
  std::vector<double> r(out.numel());
  for (double& x : r) x = uniform(rng, -1.0, 1.0);
  const TensorD loss = sum(mul(out, TensorD(out.shape(), r)));
  // A constant result (e.g. alignment over an empty mask) has zero gradient.
  if (loss.requires_grad()) loss.backward();

  double worst = 0;
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Inputs probe;
    for (const auto& t : c.inputs) probe.push_back(t.detach());
    std::span<double> v = probe[i].mutable_data();
    for (std::size_t k = 0; k < v.size(); ++k) {
      const double x0 = v[k];
      v[k] = x0 + h;
      const double up = weighted_sum(c.fn(probe), r);
      v[k] = x0 - h;
      const double down = weighted_sum(c.fn(probe), r);
      v[k] = x0;
      const double numeric = (up - down) / (2 * h);
      const double analytic = leaves[i].has_grad() ? leaves[i].grad()[k] : 0.0;
      worst = std::max(worst, relative_error(analytic, numeric));
    }
  }
  return worst;
}

const std::vector<std::string>& gradient_ops() {
  static const std::vector<std::string> ops = {
      "add", "sub", "mul", "div", "add_broadcast", "mul_broadcast", "add_scalar",
      "mul_scalar", "rsub", "pow_int", "pow_frac", "exp", "log", "neg", "clamp", "sum",
      "mean", "sum_rows", "concat", "slice", "reshape", "relu", "sigmoid", "upsample2x",
      "maxpool2x", "conv2d_k3_s1_p1", "conv2d_k3_s2_p1", "conv2d_k3_s1_p0", "conv2d_k1",
      "ce_loss", "dice_loss", "mse_loss", "dda_align_loss", "unsup_loss",
      "teacher_consistency"};
  return ops;
}

GradCase make_op_case(const std::string& op, std::uint64_t instance) {
  Rng rng(mix_seed(instance, fnv1a(op)));
  const Shape s = random_shape(rng);
  auto a = [&] { return random_tensor(rng, s, -2.0, 2.0); };

  if (op == "add") return binary(op, a(), a(), [](auto& x, auto& y) { return add(x, y); });
  if (op == "sub") return binary(op, a(), a(), [](auto& x, auto& y) { return sub(x, y); });
  if (op == "mul") return binary(op, a(), a(), [](auto& x, auto& y) { return mul(x, y); });
  if (op == "div") {
    return binary(op, a(), random_avoiding(rng, s, -2.0, 2.0, {0.0}, 0.5),
                  [](auto& x, auto& y) { return div(x, y); });
  }
  if (op == "add_broadcast") {
    return binary(op, a(), TensorD::scalar(uniform(rng, -1, 1)),
                  [](auto& x, auto& y) { return add(x, y); });
  }
  if (op == "mul_broadcast") {
    return binary(op, TensorD::scalar(uniform(rng, -1, 1)), a(),
                  [](auto& x, auto& y) { return mul(x, y); });
  }
  const double k = uniform(rng, -1.5, 1.5);
  if (op == "add_scalar") return unary(op, a(), [k](auto& x) { return add(x, k); });
  if (op == "mul_scalar") return unary(op, a(), [k](auto& x) { return mul(x, k); });
  if (op == "rsub") return unary(op, a(), [k](auto& x) { return rsub(k, x); });
  if (op == "pow_int") return unary(op, a(), [](auto& x) { return pow(x, 3.0); });
  if (op == "pow_frac") {
    return unary(op, random_tensor(rng, s, 0.2, 2.0), [](auto& x) { return pow(x, 1.7); });
  }
  if (op == "exp") return unary(op, a(), [](auto& x) { return exp(x); });
  if (op == "log") {
    return unary(op, random_tensor(rng, s, 0.2, 3.0), [](auto& x) { return log(x); });
  }
  if (op == "neg") return unary(op, a(), [](auto& x) { return neg(x); });
  if (op == "clamp") {
    return unary(op, random_avoiding(rng, s, -1.0, 1.0, {-0.5, 0.5}, 0.01),
                 [](auto& x) { return clamp(x, -0.5, 0.5); });
  }
  if (op == "sum") return unary(op, a(), [](auto& x) { return sum(x); });
  if (op == "mean") return unary(op, a(), [](auto& x) { return mean(x); });
  if (op == "sum_rows") return unary(op, a(), [](auto& x) { return sum_rows(x); });
  if (op == "concat") {
    Shape s2 = s;
    s2[1] += 1;
    return binary(op, a(), random_tensor(rng, s2, -2, 2), [](auto& x, auto& y) {
      return concat(std::vector<TensorD>{x, y}, 1);
    });
  }
  if (op == "slice") {
    const std::size_t len = s[2];
    const std::size_t b = uniform_index(rng, len);
    const std::size_t e = b + 1 + uniform_index(rng, len - b);
    return unary(op, a(), [b, e](auto& x) { return slice(x, 2, b, e); });
  }
  if (op == "reshape") {
    const std::size_t n = shape_numel(s);
    return unary(op, a(), [n](auto& x) { return reshape(x, Shape{n}); });
  }
  if (op == "relu") {
    return unary(op, random_avoiding(rng, s, -2, 2, {0.0}, 0.01), [](auto& x) { return relu(x); });
  }
  if (op == "sigmoid") return unary(op, random_tensor(rng, s, -4, 4), [](auto& x) { return sigmoid(x); });
  if (op == "upsample2x") {
    return unary(op, random_tensor(rng, random_image_shape(rng, 1), -2, 2),
                 [](auto& x) { return upsample2x(x); });
  }
  if (op == "maxpool2x") {
    return unary(op, random_distinct(rng, random_image_shape(rng, 2)),
                 [](auto& x) { return maxpool2x(x); });
  }
  if (op.rfind("conv2d", 0) == 0) {
    const std::size_t ksize = op == "conv2d_k1" ? 1 : 3;
    const std::size_t stride = op == "conv2d_k3_s2_p1" ? 2 : 1;
    const std::size_t pad = (op == "conv2d_k3_s1_p1" || op == "conv2d_k3_s2_p1") ? 1 : 0;
    const std::size_t n = 1 + uniform_index(rng, 2), c = 1 + uniform_index(rng, 3);
    const std::size_t h = 3 + uniform_index(rng, 4), w = 3 + uniform_index(rng, 4);
    const std::size_t f = 1 + uniform_index(rng, 3);
    return {op,
            {random_tensor(rng, {n, c, h, w}, -1, 1), random_tensor(rng, {f, c, ksize, ksize}, -1, 1),
             random_tensor(rng, {f}, -0.5, 0.5)},
            [stride, pad](const Inputs& in) { return conv2d(in[0], in[1], in[2], stride, pad); }};
  }

  // Losses: only the prediction is differentiated; targets are constants.
  const TensorD pred = random_tensor(rng, s, 0.05, 0.95);
  const TensorD target = random_mask(rng, s);
  if (op == "ce_loss") return unary(op, pred, [target](auto& p) { return losses::ce_loss(p, target); });
  if (op == "dice_loss") {
    return unary(op, pred, [target](auto& p) { return losses::dice_loss(p, target); });
  }
  if (op == "mse_loss") {
    const TensorD soft = random_tensor(rng, s, 0, 1);
    return unary(op, pred, [soft](auto& p) { return losses::mse_loss(p, soft); });
  }
  if (op == "dda_align_loss") {
    const TensorD m = random_mask(rng, s);
    return unary(op, pred, [target, m](auto& p) { return losses::dda_align_loss(p, target, m); });
  }
  const TensorD peer = random_tensor(rng, s, 0.05, 0.95);
  if (op == "unsup_loss") {
    return unary(op, pred, [peer](auto& p) { return losses::unsup_loss(p, peer, 0.1); });
  }
  if (op == "teacher_consistency") {
    return unary(op, pred, [peer](auto& p) { return losses::teacher_consistency(p, peer, 0.5); });
  }
  throw Error("unknown gradient op " + op);
}

GradCase make_composite_case(std::uint64_t instance) {
  const segnet::SegNetConfig net{1, 2, 1, 1};
  const ParamSetD params = segnet::init_params<double>(net, mix_seed(instance, 0xc0));
  Rng rng(mix_seed(instance, 0xc1));
  const Shape img{2, 1, 8, 8};
  const TensorD x = random_tensor(rng, img, -1.5, 1.5);
  TensorD gt;
  {
    std::vector<double> v(shape_numel(img));
    for (std::size_t n = 0; n < 2; ++n) {
      const auto m = random_blob_mask(rng, 8, 8);
      std::copy(m.begin(), m.end(), v.begin() + n * 64);
    }
    gt = TensorD(img, std::move(v));
  }
  const TensorD peer = random_tensor(rng, img, 0.05, 0.95);
  const TensorD teacher = random_tensor(rng, img, 0.05, 0.95);

  std::vector<std::string> names;
  Inputs inputs;
  // Zero biases put dead-ReLU pre-activations exactly on the kink; move
  // them to a generic point.
  for (const auto& [name, t] : params) {
    names.push_back(name);
    TensorD v = t.detach();
    if (v.rank() == 1) {
      for (double& b : v.mutable_data()) b = uniform(rng, -0.2, 0.2);
    }
    inputs.push_back(v);
  }
  auto build = [names](const Inputs& in) {
    ParamSetD p;
    for (std::size_t i = 0; i < in.size(); ++i) p.add(names[i], in[i]);
    return p;
  };
  // The disagreement mask is a constant of the unperturbed prediction.
  TensorD m_diff;
  {
    NoGradGuard no_grad;
    const TensorD p0 = segnet::forward(net, build(inputs), x);
    const std::vector<TensorD> maps{p0, peer};
    m_diff = losses::dda_mask<double>(maps);
  }
  return {"composite", inputs, [=](const Inputs& in) {
            const TensorD p = segnet::forward(net, build(in), x);
            TensorD l = losses::ce_loss(p, gt) + losses::dice_loss(p, gt);
            l = l + losses::dda_align_loss(p, gt, m_diff) * 0.5;
            l = l + losses::unsup_loss(p, peer, 0.1) * 2.0;
            return l + losses::teacher_consistency(p, teacher, 0.1) * 1.5;
          }};
}

std::vector<CheckResult> gradient_suite(int instances) {
  std::vector<CheckResult> out;
  auto run = [&](const std::string& name, double tol, double h,
                 const std::function<GradCase(std::uint64_t)>& make) {
    double worst = 0;
    try {
      for (int i = 0; i < instances; ++i) {
        worst = std::max(worst, gradient_error(make(static_cast<std::uint64_t>(i)), i, h));
      }
    } catch (const std::exception& e) {
      out.push_back(make_result(name, false, e.what()));
      return;
    }
    out.push_back(make_result(name, worst < tol,
                              fmt::format("max rel err {:.3e} over {} instances", worst, instances),
                              worst));
  };
  for (const auto& op : gradient_ops()) {
    run("grad/" + op, 1e-4, 1e-5, [&](std::uint64_t i) { return make_op_case(op, i); });
  }
  // The network has hundreds of ReLUs; a smaller step keeps the probes from
  // straddling one of their kinks.
  run("grad/composite", 1e-3, 1e-6, make_composite_case);
  return out;
}

CheckResult schedule_simulation(int n, int buffer_len, long rounds) {
  const std::string name = fmt::format("schedule/n{}_B{}", n, buffer_len);
  try {
    const long lead = buffer_len / (n - 1);
    const long t_max = (rounds + 2) * n * lead;
    std::vector<std::size_t> lab(10), unl(30);
    std::iota(lab.begin(), lab.end(), 0);
    std::iota(unl.begin(), unl.end(), 10);
    const progressive::BatchStream stream(lab, unl, 2, 2, 17);
    progressive::Scheduler s(n, lead, t_max);

    std::vector<long> consumed(n, 0);
    long phases = 0, gap_checks = 0;
    bool truncated = false;
    while (!s.done()) {
      if (!s.in_phase()) {
        const long top = *std::max_element(s.iters().begin(), s.iters().end());
        truncated = top + lead > t_max;
        s.begin_phase();
        const long lo = *std::min_element(s.iters().begin(), s.iters().end());
        if (s.iters()[s.active()] != lo) return make_result(name, false, "CPM is not the laggard");
      }
      const int m = s.active();
      const progressive::Batch b = s.fetch(stream);
      if (b.stream_index != consumed[m]) {
        return make_result(name, false,
                           fmt::format("model {} got index {} after {}", m, b.stream_index, consumed[m]));
      }
      if (!(b == stream.at(b.stream_index))) {
        return make_result(name, false, fmt::format("replayed batch {} differs", b.stream_index));
      }
      ++consumed[m];
      if (s.buffer_size() > s.capacity()) return make_result(name, false, "buffer over capacity");
      if (s.advance()) {
        ++phases;
        if (!truncated && phases >= n - 1) {
          std::vector<long> it = s.iters();
          std::sort(it.begin(), it.end());
          for (std::size_t i = 0; i + 1 < it.size(); ++i) {
            if (it[i + 1] - it[i] != lead) {
              return make_result(name, false,
                                 fmt::format("gap {} after phase {}", it[i + 1] - it[i], phases));
            }
          }
          ++gap_checks;
        }
      }
    }
    for (int m = 0; m < n; ++m) {
      if (consumed[m] != t_max || s.iters()[m] != t_max) {
        return make_result(name, false, fmt::format("model {} stopped at {}", m, consumed[m]));
      }
    }
    const long full_rounds = phases / n;
    return make_result(name, full_rounds >= rounds,
                       fmt::format("{} phases ({} rounds), {} gap checks at lead {}", phases,
                                   full_rounds, gap_checks, lead),
                       static_cast<double>(full_rounds));
  } catch (const std::exception& e) {
    return make_result(name, false, e.what());
  }
}

std::vector<CheckResult> schedule_suite() {
  return {schedule_simulation(2, 4, 12), schedule_simulation(2, 20, 12),
          schedule_simulation(3, 6, 12)};
}

std::vector<CheckResult> closed_form_suite() {
  std::vector<CheckResult> out;
  const double w0 = losses::warmup(0, 2000, 20.0);
  const double w0_err = std::abs(w0 - 20.0 * std::exp(-5.0));
  out.push_back(make_result("closed/warmup_t0", w0_err < 1e-6, fmt::format("{:.9f}", w0), w0_err));

  bool plateau = true;
  for (long t : {1000L, 1001L, 1500L, 2000L}) plateau = plateau && losses::warmup(t, 2000, 20.0) == 20.0;
  plateau = plateau && losses::warmup(5, 10, 3.5) == 3.5;
  out.push_back(make_result("closed/warmup_plateau", plateau, "hat exactly from t_max/2 on"));

  const double sh = losses::sharpen(TensorD::scalar(0.8), 0.5).item();
  const double sh_err = std::abs(sh - 0.94117647);
  out.push_back(make_result("closed/sharpen", sh_err < 1e-8, fmt::format("{:.10f}", sh), sh_err));

  {
    const segnet::SegNetConfig net{1, 2, 1, 1};
    segnet::ModelPair pair = segnet::ModelPair::create(net, 3, 0, 0.9);
    pair.teacher = segnet::init_params<float>(net, 99).clone(false);
    const ParamSet t0 = pair.teacher.clone(false);
    const int k = 10;
    for (int i = 0; i < k; ++i) segnet::ema_update(pair);
    const double ak = std::pow(0.9, k);
    double worst = 0;
    for (std::size_t p = 0; p < pair.teacher.size(); ++p) {
      const auto tk = pair.teacher[p].second.data();
      const auto a = t0[p].second.data();
      const auto s = pair.student[p].second.data();
      for (std::size_t i = 0; i < tk.size(); ++i) {
        worst = std::max(worst, std::abs(tk[i] - (ak * a[i] + (1 - ak) * s[i])));
      }
    }
    out.push_back(make_result("closed/ema_k_step", worst < 1e-6,
                              fmt::format("max deviation {:.3e} after {} updates", worst, k), worst));
  }

  {
    const std::vector<TensorD> maps{TensorD({3}, {0.9, 0.8, 0.1}), TensorD({3}, {0.7, 0.2, 0.3})};
    const auto m = losses::dda_mask<double>(maps);
    const bool ok = std::vector<double>(m.data().begin(), m.data().end()) ==
                    std::vector<double>{0, 1, 0};
    out.push_back(make_result("closed/dda_mask_partial", ok, "[1,1,0] vs [1,0,0] -> [0,1,0]"));
  }
  {
    const std::vector<TensorD> maps{TensorD({4}, {0.9, 0.1, 0.8, 0.2}),
                                    TensorD({4}, {0.1, 0.9, 0.2, 0.8})};
    const auto m = losses::dda_mask<double>(maps);
    const bool ok = std::all_of(m.data().begin(), m.data().end(), [](double v) { return v == 1.0; });
    out.push_back(make_result("closed/dda_mask_complement", ok, "complementary maps -> all ones"));
  }
  {
    const TensorD cpm({4}, {0.9, 0.6, 0.1, 0.2});
    const TensorD gt({4}, {1, 1, 0, 0});
    const TensorD md({4}, {0, 1, 0, 0});
    const double v = losses::dda_align_loss(cpm, gt, md).item();
    // (0.6 - 1)^2 evaluated the same way the loss does
    const double expect = (0.6 - 1.0) * (0.6 - 1.0);
    out.push_back(make_result("closed/dda_align", v == expect && std::abs(v - 0.16) < 1e-15,
                              fmt::format("{:.17g}", v), v));
  }
  return out;
}

CheckResult metric_oracle(int pairs, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x3e7));
  const int h = 16, w = 16;
  double worst = 0;
  int overlap_mismatch = 0;
  for (int i = 0; i < pairs; ++i) {
    std::vector<std::uint8_t> a, b;
    do a = random_blob_mask(rng, h, w); while (!any_set(a));
    do b = random_blob_mask(rng, h, w); while (!any_set(b));
    const segmetrics::MaskView va{a, h, w}, vb{b, h, w};
    const auto fast = segmetrics::hd95_asd(va, vb);
    const auto slow = segmetrics::hd95_asd_bruteforce(va, vb);
    worst = std::max({worst, std::abs(fast.hd95 - slow.hd95), std::abs(fast.asd - slow.asd)});

    long na = 0, nb = 0, both = 0, uni = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      na += a[k];
      nb += b[k];
      both += a[k] & b[k];
      uni += a[k] | b[k];
    }
    const auto [dice, jac] = segmetrics::dice_jaccard(va, vb);
    if (dice != 2.0 * both / static_cast<double>(na + nb) || jac != both / static_cast<double>(uni)) {
      ++overlap_mismatch;
    }
  }
  return make_result("metrics/oracle", worst < 1e-9 && overlap_mismatch == 0,
                     fmt::format("{} pairs, max |fast - brute| {:.3e}, {} overlap mismatches", pairs,
                                 worst, overlap_mismatch),
                     worst);
}

MiniRun mini_run(long t_max) {
  MiniRun r;
  synthdata::DataGenConfig d;
  d.count = 40;
  d.height = 16;
  d.width = 16;
  d.labeled_fraction = 0.25;
  d.seed = 5;
  r.data = synthdata::generate(d);
  r.split = synthdata::split(r.data, d.labeled_fraction, d.seed);
  r.setup.net = {1, 4, 1, 1};
  r.setup.config.t_max = t_max;
  r.setup.config.buffer_len_B = 4;
  r.setup.config.lr0 = 0.05;
  r.setup.config.seed = 11;
  r.setup.config.teacher_noise_sigma = 0.05;
  r.setup.weights.t_max = t_max;
  r.setup.ema_alpha = 0.9;
  return r;
}

std::vector<CheckResult> gating_suite() {
  std::vector<CheckResult> out;
  try {
    MiniRun mr = mini_run(60);
    progressive::Trainer trainer(mr.setup, mr.data, mr.split);
    trainer.run();
    long gated = 0, passed = 0, bad = 0;
    for (const auto& row : trainer.state().history) {
      const auto& b = row.loss;
      if (b.plf_pass == 0) {
        ++gated;
        // l_s and l_total carry no lambda1 or beta part at all
        if (b.l_s != b.l_ce + b.l_dice || b.l_total != b.l_s + b.lambda2_t * b.l_t) ++bad;
      } else {
        ++passed;
      }
      const losses::LossParts parts{b.l_ce, b.l_dice, b.l_aln, b.l_u, b.l_t};
      const auto again = losses::assemble_total(parts, mr.setup.weights, row.model_iter, b.plf_pass);
      if (again.l_total != b.l_total) ++bad;
    }
    out.push_back(make_result("gating/plf_zero_contribution", bad == 0 && gated > 0 && passed > 0,
                              fmt::format("{} gated rows, {} passing rows, {} violations", gated,
                                          passed, bad),
                              static_cast<double>(bad)));
  } catch (const std::exception& e) {
    out.push_back(make_result("gating/plf_zero_contribution", false, e.what()));
  }

  // Toggle structure: from one state and one batch, each switch removes
  // exactly its own term and nothing else.
  try {
    MiniRun mr = mini_run(40);
    struct Row {
      const char* label;
      bool plf, dda, mt;
    };
    const Row rows[] = {{"all", true, true, true},
                        {"no_plf", false, true, true},
                        {"no_dda", true, false, true},
                        {"no_mt", true, true, false},
                        {"none", false, false, false}};
    // Warm the shared state up a little so predictions disagree.
    progressive::Trainer base(mr.setup, mr.data, mr.split);
    for (int i = 0; i < 10; ++i) base.step();
    const progressive::Batch batch = base.stream().at(3);
    std::vector<losses::LossBreakdown> got;
    std::vector<bool> teacher_moved;
    for (const Row& r : rows) {
      progressive::TrainerSetup s = mr.setup;
      s.config.plf_on = r.plf;
      s.config.dda_on = r.dda;
      s.config.mt_on = r.mt;
      progressive::Trainer t(s, mr.data, mr.split);
      auto& st = t.mutable_state();
      for (std::size_t p = 0; p < st.pairs.size(); ++p) {
        st.pairs[p].student = base.state().pairs[p].student.clone(true);
        st.pairs[p].teacher = base.state().pairs[p].teacher.clone(false);
      }
      st.rng = base.state().rng;
      const ParamSet before = st.pairs[0].teacher.clone(false);
      got.push_back(t.train_iteration(0, batch).loss);
      bool moved = false;
      for (std::size_t p = 0; p < before.size(); ++p) {
        const auto a = before[p].second.data(), b = st.pairs[0].teacher[p].second.data();
        moved = moved || !std::equal(a.begin(), a.end(), b.begin());
      }
      teacher_moved.push_back(moved);
    }
    const auto& all = got[0];
    std::vector<std::string> issues;
    auto expect = [&](bool cond, const std::string& what) {
      if (!cond) issues.push_back(what);
    };
    for (std::size_t i = 1; i < got.size(); ++i) {
      expect(got[i].l_ce == all.l_ce && got[i].l_dice == all.l_dice,
             std::string(rows[i].label) + ": supervised terms changed");
    }
    const double l1 = all.lambda1_t, l2 = all.lambda2_t, beta = mr.setup.weights.beta;
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); };
    // no_plf: gate forced open; the remaining terms are unchanged
    expect(got[1].plf_pass == 1, "no_plf: gate not forced open");
    expect(near(got[1].l_total, all.l_ce + all.l_dice + beta * all.l_aln + l1 * all.l_u + l2 * all.l_t),
           "no_plf: total is not the ungated sum");
    // no_dda: exactly the beta * plf * aln term disappears
    expect(got[2].l_aln == 0, "no_dda: l_aln still logged");
    expect(near(got[2].l_total, all.l_total - beta * all.plf_pass * all.l_aln),
           "no_dda: total differs by more than the alignment term");
    // no_mt: exactly the lambda2 * l_t term disappears and the teacher stays put
    expect(got[3].l_t == 0, "no_mt: l_t still logged");
    expect(near(got[3].l_total, all.l_total - l2 * all.l_t),
           "no_mt: total differs by more than the teacher term");
    expect(teacher_moved[0] && !teacher_moved[3], "no_mt: teacher still maintained");
    expect(near(got[4].l_total, all.l_ce + all.l_dice + l1 * all.l_u), "none: unexpected total");
    out.push_back(make_result("gating/toggle_structure", issues.empty(),
                              issues.empty() ? fmt::format("plf_pass={} in the reference row",
                                                           all.plf_pass)
                                             : fmt::format("{}", fmt::join(issues, "; "))));
  } catch (const std::exception& e) {
    out.push_back(make_result("gating/toggle_structure", false, e.what()));
  }
  return out;
}

std::vector<CheckResult> determinism_suite() {
  std::vector<CheckResult> out;
  namespace fs = std::filesystem;
  try {
    const MiniRun mr = mini_run(40);
    const segmetrics::EvalConfig eval;
    auto full = [&] {
      progressive::Trainer t(mr.setup, mr.data, mr.split);
      t.run();
      const auto rep = segmetrics::evaluate_run(t.state().pairs, mr.data, mr.split.test, eval);
      return std::pair{progressive::history_csv(t.state().history), rep.to_csv()};
    };
    const auto a = full();
    const auto b = full();
    out.push_back(make_result("determinism/repeat", a == b,
                              fmt::format("history {} bytes, report {} bytes", a.first.size(),
                                          a.second.size())));

    const fs::path dir = fs::temp_directory_path() /
                         fmt::format("pmt_verify_{}", fnv1a(a.first) & 0xffffff);
    fs::create_directories(dir);
    const fs::path ck = dir / "mid.pmt";
    {
      progressive::Trainer t(mr.setup, mr.data, mr.split);
      // stop inside a phase so the buffer and phase target are mid-flight
      for (int i = 0; i < 27; ++i) t.step();
      t.save_checkpoint(ck);
    }
    progressive::Trainer resumed(mr.setup, mr.data, mr.split);
    resumed.load_checkpoint(ck);
    resumed.run();
    progressive::Trainer straight(mr.setup, mr.data, mr.split);
    straight.run();
    bool params_equal = true;
    for (std::size_t p = 0; p < straight.state().pairs.size(); ++p) {
      for (auto which : {0, 1}) {
        const ParamSet& x = which ? straight.state().pairs[p].teacher : straight.state().pairs[p].student;
        const ParamSet& y = which ? resumed.state().pairs[p].teacher : resumed.state().pairs[p].student;
        for (std::size_t i = 0; i < x.size(); ++i) {
          const auto u = x[i].second.data(), v = y[i].second.data();
          params_equal = params_equal && std::equal(u.begin(), u.end(), v.begin(), v.end());
        }
      }
    }
    const bool hist_equal =
        progressive::history_csv(straight.state().history) == progressive::history_csv(resumed.state().history);
    fs::remove_all(dir);
    out.push_back(make_result("determinism/resume", params_equal && hist_equal,
                              fmt::format("params {}, history {}", params_equal ? "equal" : "DIFFER",
                                          hist_equal ? "equal" : "DIFFERS")));
  } catch (const std::exception& e) {
    out.push_back(make_result("determinism", false, e.what()));
  }
  return out;
}

std::vector<CheckResult> run_suite(bool quick) {
  std::vector<CheckResult> all;
  auto append = [&](std::vector<CheckResult> v) { all.insert(all.end(), v.begin(), v.end()); };
  append(gradient_suite(quick ? 4 : 20));
  append(schedule_suite());
  append(closed_form_suite());
  all.push_back(metric_oracle(quick ? 10 : 50));
  append(gating_suite());
  append(determinism_suite());
  return all;
}

}  // namespace pmt::verify
