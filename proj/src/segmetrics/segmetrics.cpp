#include "pmt/segmetrics/segmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/core/json_fields.hpp"

namespace pmt::segmetrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_view(MaskView m, const char* what) {
  if (m.data.size() != m.height * m.width) {
    throw ShapeError(fmt::format("{}: mask buffer has {} values for {}x{}", what, m.data.size(),
                                 m.height, m.width));
  }
}

void check_pair(MaskView a, MaskView b, const char* what) {
  check_view(a, what);
  check_view(b, what);
  if (a.height != b.height || a.width != b.width) {
    throw ShapeError(fmt::format("{}: shape mismatch {}x{} vs {}x{}", what, a.height, a.width,
                                 b.height, b.width));
  }
}

bool any(MaskView m) {
  return std::any_of(m.data.begin(), m.data.end(), [](std::uint8_t v) { return v != 0; });
}

// 1D lower envelope of parabolas (Felzenszwalb & Huttenlocher). f holds
// squared distances, +inf where there is no site.
void edt_1d(const double* f, std::size_t n, std::size_t stride, double* out,
            std::vector<int>& v, std::vector<double>& z, std::vector<double>& g) {
  for (std::size_t i = 0; i < n; ++i) g[i] = f[i * stride];
  int k = -1;
  for (std::size_t q = 0; q < n; ++q) {
    if (g[q] == kInf) continue;
    const double fq = g[q] + static_cast<double>(q * q);
    while (k >= 0) {
      const double p = v[k];
      const double s = (fq - (g[v[k]] + p * p)) / (2.0 * (static_cast<double>(q) - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = static_cast<int>(q);
    z[k] = k == 0 ? -kInf : (fq - (g[v[k - 1]] + static_cast<double>(v[k - 1]) * v[k - 1])) /
                                (2.0 * (static_cast<double>(q) - v[k - 1]));
    z[k + 1] = kInf;
  }
  if (k < 0) {
    for (std::size_t i = 0; i < n; ++i) out[i * stride] = kInf;
    return;
  }
  int j = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[j + 1] < static_cast<double>(q)) ++j;
    const double d = static_cast<double>(q) - v[j];
    out[q * stride] = d * d + g[v[j]];
  }
}

MaskView surface_mask(MaskView m, std::vector<std::uint8_t>& storage) {
  storage.assign(m.height * m.width, 0);
  for (const Point& p : surface(m)) storage[p.y * m.width + p.x] = 1;
  return {storage, m.height, m.width};
}

void append_directed(const std::vector<Point>& from, const std::vector<double>& sq_to,
                     std::size_t width, double spacing, std::vector<double>& out) {
  for (const Point& p : from) out.push_back(std::sqrt(sq_to[p.y * width + p.x]) * spacing);
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double d : v) s += d;
  return s / static_cast<double>(v.size());
}

std::string num(double v) {
  if (std::isnan(v)) return "nan";
  return fmt::format("{:.9g}", v);
}

nlohmann::json num_json(double v) {
  if (std::isnan(v)) return nullptr;
  return v;
}

}  // namespace

std::pair<double, double> dice_jaccard(MaskView pred, MaskView gt) {
  check_pair(pred, gt, "dice_jaccard");
  std::size_t a = 0, b = 0, both = 0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, g = gt.data[i] != 0;
    a += p;
    b += g;
    both += p && g;
  }
  if (a + b == 0) return {1.0, 1.0};
  const double dice = 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
  const double jac = static_cast<double>(both) / static_cast<double>(a + b - both);
  return {dice, jac};
}

std::vector<Point> surface(MaskView m) {
  check_view(m, "surface");
  const std::size_t h = m.height, w = m.width;
  auto fg = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    if (y < 0 || x < 0 || y >= static_cast<std::ptrdiff_t>(h) || x >= static_cast<std::ptrdiff_t>(w)) {
      return false;
    }
    return m.data[y * w + x] != 0;
  };
  std::vector<Point> pts;
  for (std::ptrdiff_t y = 0; y < static_cast<std::ptrdiff_t>(h); ++y) {
    for (std::ptrdiff_t x = 0; x < static_cast<std::ptrdiff_t>(w); ++x) {
      if (!fg(y, x)) continue;
      if (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1)) {
        pts.push_back({static_cast<int>(y), static_cast<int>(x)});
      }
    }
  }
  if (pts.empty()) throw Error("surface: empty mask");
  return pts;
}

std::vector<double> squared_distance_transform(MaskView sites) {
  check_view(sites, "squared_distance_transform");
  const std::size_t h = sites.height, w = sites.width;
  std::vector<double> f(h * w), tmp(h * w);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = sites.data[i] ? 0.0 : kInf;
  const std::size_t n = std::max(h, w);
  std::vector<int> v(n);
  std::vector<double> z(n + 1), g(n);
  for (std::size_t x = 0; x < w; ++x) edt_1d(&f[x], h, w, &tmp[x], v, z, g);
  for (std::size_t y = 0; y < h; ++y) edt_1d(&tmp[y * w], w, 1, &f[y * w], v, z, g);
  return f;
}

std::vector<double> pooled_surface_distances(MaskView pred, MaskView gt, double spacing) {
  check_pair(pred, gt, "hd95_asd");
  const auto sp = surface(pred);
  const auto sg = surface(gt);
  std::vector<std::uint8_t> bp, bg;
  const auto dt_pred = squared_distance_transform(surface_mask(pred, bp));
  const auto dt_gt = squared_distance_transform(surface_mask(gt, bg));
  std::vector<double> d;
  d.reserve(sp.size() + sg.size());
  append_directed(sp, dt_gt, pred.width, spacing, d);
  append_directed(sg, dt_pred, pred.width, spacing, d);
  return d;
}

std::vector<double> pooled_surface_distances_bruteforce(MaskView pred, MaskView gt,
                                                        double spacing) {
  check_pair(pred, gt, "hd95_asd");
  const auto sp = surface(pred);
  const auto sg = surface(gt);
  auto directed = [&](const std::vector<Point>& from, const std::vector<Point>& to,
                      std::vector<double>& out) {
    for (const Point& p : from) {
      long best = std::numeric_limits<long>::max();
      for (const Point& q : to) {
        const long dy = p.y - q.y, dx = p.x - q.x;
        best = std::min(best, dy * dy + dx * dx);
      }
      out.push_back(std::sqrt(static_cast<double>(best)) * spacing);
    }
  };
  std::vector<double> d;
  directed(sp, sg, d);
  directed(sg, sp, d);
  return d;
}

double percentile_linear(std::vector<double> values, double q) {
  if (values.empty()) throw Error("percentile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw Error("percentile rank must be in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

SurfaceDistances hd95_asd(MaskView pred, MaskView gt, double spacing) {
  auto d = pooled_surface_distances(pred, gt, spacing);
  const double asd = mean_of(d);
  return {percentile_linear(std::move(d), 0.95), asd};
}

SurfaceDistances hd95_asd_bruteforce(MaskView pred, MaskView gt, double spacing) {
  auto d = pooled_surface_distances_bruteforce(pred, gt, spacing);
  const double asd = mean_of(d);
  return {percentile_linear(std::move(d), 0.95), asd};
}

void EvalConfig::validate() const {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("eval.threshold must be in (0, 1)");
  if (window_h < 0 || window_w < 0) throw ConfigError("eval.window_h/window_w must be >= 0");
  if (stride_h < 1 || stride_w < 1) throw ConfigError("eval.stride_h/stride_w must be >= 1");
  if (!(spacing > 0.0)) throw ConfigError("eval.spacing must be > 0");
  if (batch_size < 1) throw ConfigError("eval.batch_size must be >= 1");
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate a;
  double sum = 0;
  for (double v : values) {
    if (std::isnan(v)) {
      ++a.excluded;
    } else {
      sum += v;
      ++a.n;
    }
  }
  if (a.n == 0) {
    a.mean = kNaN;
    a.std = kNaN;
    return a;
  }
  a.mean = sum / static_cast<double>(a.n);
  if (a.n > 1) {
    double ss = 0;
    for (double v : values) {
      if (!std::isnan(v)) ss += (v - a.mean) * (v - a.mean);
    }
    a.std = std::sqrt(ss / static_cast<double>(a.n - 1));
  }
  return a;
}

SampleMetrics evaluate_sample(int sample_id, MaskView pred, MaskView gt, double spacing) {
  SampleMetrics m;
  m.sample_id = sample_id;
  std::tie(m.dice, m.jaccard) = dice_jaccard(pred, gt);
  const bool ep = !any(pred), eg = !any(gt);
  if (ep || eg) {
    m.hd95 = m.asd = kNaN;
    if (ep) m.flags = "empty_pred";
    if (eg) m.flags += m.flags.empty() ? "empty_gt" : ";empty_gt";
  } else {
    const auto sd = hd95_asd(pred, gt, spacing);
    m.hd95 = sd.hd95;
    m.asd = sd.asd;
  }
  return m;
}

std::string MetricReport::to_csv() const {
  std::string out = "sample_id,dice,jaccard,hd95,asd,flags\n";
  for (const auto& s : samples) {
    out += fmt::format("{},{},{},{},{},{}\n", s.sample_id, num(s.dice), num(s.jaccard),
                       num(s.hd95), num(s.asd), s.flags);
  }
  out += "\nmetric,mean,std,n,excluded\n";
  auto row = [&](const char* name, const Aggregate& a) {
    out += fmt::format("{},{},{},{},{}\n", name, num(a.mean), num(a.std), a.n, a.excluded);
  };
  row("dice", dice);
  row("jaccard", jaccard);
  row("hd95", hd95);
  row("asd", asd);
  return out;
}

nlohmann::json MetricReport::to_json() const {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& s : samples) {
    rows.push_back({{"sample_id", s.sample_id},
                    {"dice", num_json(s.dice)},
                    {"jaccard", num_json(s.jaccard)},
                    {"hd95", num_json(s.hd95)},
                    {"asd", num_json(s.asd)},
                    {"flags", s.flags}});
  }
  auto agg = [](const Aggregate& a) {
    return nlohmann::json{{"mean", num_json(a.mean)},
                          {"std", num_json(a.std)},
                          {"n", a.n},
                          {"excluded", a.excluded}};
  };
  return {{"config", config},
          {"sample_count", samples.size()},
          {"samples", rows},
          {"aggregate",
           {{"dice", agg(dice)}, {"jaccard", agg(jaccard)}, {"hd95", agg(hd95)}, {"asd", agg(asd)}}}};
}

void MetricReport::write(const std::filesystem::path& csv_path) const {
  write_text_file(csv_path, to_csv());
  auto json_path = csv_path;
  json_path.replace_extension(".json");
  write_text_file(json_path, to_json().dump(2) + "\n");
}

MetricReport evaluate_masks(const synthdata::Dataset& data, std::span<const std::size_t> indices,
                            std::span<const std::vector<std::uint8_t>> pred_masks,
                            const EvalConfig& eval, nlohmann::json config_echo) {
  if (indices.size() != pred_masks.size()) {
    throw ShapeError("evaluate_masks: one prediction per indexed sample required");
  }
  MetricReport r;
  r.config = std::move(config_echo);
  std::vector<double> d, j, h, a;
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const auto& s = data.samples.at(indices[k]);
    const MaskView gt{s.mask, s.height, s.width};
    const MaskView pred{pred_masks[k], s.height, s.width};
    r.samples.push_back(evaluate_sample(s.sample_id, pred, gt, eval.spacing));
    d.push_back(r.samples.back().dice);
    j.push_back(r.samples.back().jaccard);
    h.push_back(r.samples.back().hd95);
    a.push_back(r.samples.back().asd);
  }
  r.dice = aggregate(d);
  r.jaccard = aggregate(j);
  r.hd95 = aggregate(h);
  r.asd = aggregate(a);
  return r;
}

MetricReport evaluate_run(const SoftPredictor& predict, const synthdata::Dataset& data,
                          std::span<const std::size_t> indices, const EvalConfig& eval,
                          nlohmann::json config_echo) {
  eval.validate();
  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(indices.size());
  const float thr = static_cast<float>(eval.threshold);
  auto binarize = [&](std::span<const float> soft) {
    std::vector<std::uint8_t> m(soft.size());
    for (std::size_t i = 0; i < soft.size(); ++i) m[i] = soft[i] > thr ? 1 : 0;
    masks.push_back(std::move(m));
  };

  if (eval.sliding) {
    for (std::size_t idx : indices) {
      const auto& s = data.samples.at(idx);
      const segnet::Extent2 window{eval.window_h ? static_cast<std::size_t>(eval.window_h) : s.height,
                                   eval.window_w ? static_cast<std::size_t>(eval.window_w) : s.width};
      const segnet::Extent2 stride{static_cast<std::size_t>(eval.stride_h),
                                   static_cast<std::size_t>(eval.stride_w)};
      Tensor soft = segnet::sliding_window(Tensor(Shape{s.height, s.width}, s.image), window,
                                           stride, predict);
      binarize(soft.data());
    }
  } else {
    for (std::size_t b = 0; b < indices.size(); b += eval.batch_size) {
      const std::size_t e = std::min(indices.size(), b + eval.batch_size);
      const auto& first = data.samples.at(indices[b]);
      const std::size_t hw = first.height * first.width;
      std::vector<float> x;
      x.reserve((e - b) * hw);
      for (std::size_t k = b; k < e; ++k) {
        const auto& img = data.samples.at(indices[k]).image;
        x.insert(x.end(), img.begin(), img.end());
      }
      Tensor soft = predict(Tensor(Shape{e - b, 1, first.height, first.width}, std::move(x)));
      if (soft.numel() != (e - b) * hw) {
        throw ShapeError("predictor returned " + shape_str(soft.shape()));
      }
      const auto sv = soft.data();
      for (std::size_t k = 0; k < e - b; ++k) binarize(sv.subspan(k * hw, hw));
    }
  }
  return evaluate_masks(data, indices, masks, eval, std::move(config_echo));
}

MetricReport evaluate_run(std::span<const segnet::ModelPair> pairs, const synthdata::Dataset& data,
                          std::span<const std::size_t> indices, const EvalConfig& eval,
                          nlohmann::json config_echo) {
  if (pairs.empty()) throw Error("evaluate_run needs at least one model pair");
  return evaluate_run(
      [&](const Tensor& x) { return segnet::infer_averaged(pairs, x, eval.threshold).soft; }, data,
      indices, eval, std::move(config_echo));
}

nlohmann::json to_json(const EvalConfig& c) {
  return {{"threshold", c.threshold}, {"sliding", c.sliding},   {"window_h", c.window_h},
          {"window_w", c.window_w},   {"stride_h", c.stride_h}, {"stride_w", c.stride_w},
          {"spacing", c.spacing},     {"batch_size", c.batch_size}};
}

EvalConfig eval_config_from_json(const nlohmann::json& j) {
  EvalConfig c;
  JsonFields f(j, "eval");
  f.get("threshold", c.threshold);
  f.get("sliding", c.sliding);
  f.get("window_h", c.window_h);
  f.get("window_w", c.window_w);
  f.get("stride_h", c.stride_h);
  f.get("stride_w", c.stride_w);
  f.get("spacing", c.spacing);
  f.get("batch_size", c.batch_size);
  f.finish();
  return c;
}

}  // namespace pmt::segmetrics
