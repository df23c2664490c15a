#include "pmt/synthdata/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include <fmt/format.h>

#include "pmt/core/binio.hpp"
#include "pmt/core/error.hpp"
#include "pmt/core/json_fields.hpp"
#include "pmt/core/random.hpp"

namespace pmt::synthdata {
namespace {

constexpr char kMagic[] = "SEGV1";
constexpr std::size_t kMagicLen = 5;
constexpr std::uint32_t kFormatVersion = 1;
constexpr std::uint64_t kMaxPixels = std::uint64_t{1} << 26;
constexpr std::uint64_t kSplitKey = 0x5b117;

struct Blob {
  double cx, cy, r0;
  std::vector<double> amp, phase;
};

Blob draw_blob(const DataGenConfig& c, Rng& rng) {
  Blob b;
  b.cx = uniform(rng, 0.3, 0.7) * c.width;
  b.cy = uniform(rng, 0.3, 0.7) * c.height;
  b.r0 = uniform(rng, 0.12, 0.3) * std::min(c.width, c.height);
  double total = 0;
  for (int k = 1; k <= c.blob_complexity; ++k) {
    b.amp.push_back(uniform(rng, -1.0, 1.0) * 0.3 / k);
    b.phase.push_back(uniform(rng, 0.0, 2 * std::numbers::pi));
    total += std::abs(b.amp.back());
  }
  // keep r(theta) >= 0.4 r0 so the outline stays star-convex about the centre
  if (total > 0.6) {
    for (double& a : b.amp) a *= 0.6 / total;
  }
  return b;
}

bool inside(const Blob& b, double x, double y) {
  const double dx = x - b.cx, dy = y - b.cy;
  const double theta = std::atan2(dy, dx);
  double r = 1.0;
  for (std::size_t k = 0; k < b.amp.size(); ++k) {
    r += b.amp[k] * std::cos(static_cast<double>(k + 1) * theta + b.phase[k]);
  }
  r *= b.r0;
  return dx * dx + dy * dy <= r * r;
}

}  // namespace

void DataGenConfig::validate(std::size_t factor) const {
  if (count < 2) throw ConfigError("data.count must be >= 2");
  if (height < 1 || width < 1) throw ConfigError("data.height and data.width must be >= 1");
  if (factor > 0 && (height % factor != 0 || width % factor != 0)) {
    throw ConfigError(fmt::format("data.height/data.width ({}x{}) must be divisible by {}",
                                  height, width, factor));
  }
  if (static_cast<std::uint64_t>(height) * static_cast<std::uint64_t>(width) > kMaxPixels) {
    throw ConfigError("data.height*data.width too large");
  }
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ConfigError("data.labeled_fraction must be in (0, 1]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("data.noise_sigma must be >= 0");
  if (!(bias_field_amp >= 0.0)) throw ConfigError("data.bias_field_amp must be >= 0");
  if (blob_complexity < 0) throw ConfigError("data.blob_complexity must be >= 0");
}

double Sample::foreground_fraction() const {
  if (mask.empty()) return 0.0;
  std::size_t n = 0;
  for (auto m : mask) n += m;
  return static_cast<double>(n) / static_cast<double>(mask.size());
}

Sample generate_sample(const DataGenConfig& c, int sample_id, std::vector<double>* raw) {
  c.validate();
  Rng rng(mix_seed(c.seed, static_cast<std::uint64_t>(sample_id)));
  const std::size_t h = c.height, w = c.width;
  Sample s;
  s.sample_id = sample_id;
  s.height = h;
  s.width = w;
  s.mask.assign(h * w, 0);

  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    const Blob blob = draw_blob(c, rng);
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        s.mask[y * w + x] = inside(blob, x + 0.5, y + 0.5) ? 1 : 0;
      }
    }
    const double fg = s.foreground_fraction();
    ok = fg >= kMinForeground && fg <= kMaxForeground;
  }
  if (!ok) {
    throw Error(fmt::format("sample {}: no blob with foreground fraction in [{}, {}] after {} attempts",
                            sample_id, kMinForeground, kMaxForeground, kMaxAttempts));
  }

  double coef[5];
  for (double& v : coef) v = uniform(rng, -1.0, 1.0);
  std::vector<double> img(h * w);
  for (std::size_t y = 0; y < h; ++y) {
    const double v = h > 1 ? 2.0 * y / (h - 1) - 1.0 : 0.0;
    for (std::size_t x = 0; x < w; ++x) {
      const double u = w > 1 ? 2.0 * x / (w - 1) - 1.0 : 0.0;
      const double field =
          0.5 * c.bias_field_amp *
          (coef[0] * u + coef[1] * v + coef[2] * u * v + coef[3] * u * u + coef[4] * v * v);
      const double base = s.mask[y * w + x] ? kInsideIntensity : kOutsideIntensity;
      img[y * w + x] = base + field + c.noise_sigma * normal01(rng);
    }
  }
  if (raw) *raw = img;

  double mean = 0;
  for (double v : img) mean += v;
  mean /= static_cast<double>(img.size());
  double var = 0;
  for (double v : img) var += (v - mean) * (v - mean);
  var /= static_cast<double>(img.size());
  if (!(var > 0)) throw NumericError(fmt::format("sample {}: constant image", sample_id));
  const double inv_sd = 1.0 / std::sqrt(var);
  s.image.resize(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    s.image[i] = static_cast<float>((img[i] - mean) * inv_sd);
  }
  return s;
}

Dataset generate(const DataGenConfig& config) {
  config.validate();
  Dataset d;
  d.config = config;
  d.samples.reserve(config.count);
  for (int i = 0; i < config.count; ++i) d.samples.push_back(generate_sample(config, i));
  return d;
}

Split split(std::size_t count, double labeled_fraction, std::uint64_t seed) {
  if (count < 2) throw ConfigError("split needs at least 2 samples");
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw ConfigError("data.labeled_fraction must be in (0, 1]");
  }
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(mix_seed(seed, kSplitKey));
  shuffle(order, rng);

  const std::size_t n_train = count * 4 / 5;
  const auto n_labeled =
      static_cast<std::size_t>(std::llround(labeled_fraction * static_cast<double>(n_train)));
  if (n_labeled < 1) {
    throw ConfigError(fmt::format(
        "data.labeled_fraction {} of {} training samples gives no labeled sample",
        labeled_fraction, n_train));
  }
  Split s;
  s.labeled.assign(order.begin(), order.begin() + n_labeled);
  s.unlabeled.assign(order.begin() + n_labeled, order.begin() + n_train);
  s.test.assign(order.begin() + n_train, order.end());
  std::sort(s.labeled.begin(), s.labeled.end());
  std::sort(s.unlabeled.begin(), s.unlabeled.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

Split split(Dataset& dataset, double labeled_fraction, std::uint64_t seed) {
  Split s = split(dataset.samples.size(), labeled_fraction, seed);
  for (auto& sample : dataset.samples) sample.is_labeled = false;
  for (std::size_t i : s.labeled) dataset.samples[i].is_labeled = true;
  return s;
}

std::vector<std::uint8_t> encode_sample(const Sample& s) {
  if (s.image.size() != s.height * s.width || s.mask.size() != s.height * s.width) {
    throw ShapeError(fmt::format("sample {}: buffers do not match {}x{}", s.sample_id, s.height,
                                 s.width));
  }
  ByteWriter out;
  out.put_chars(std::string_view(kMagic, kMagicLen));
  out.put_u32(static_cast<std::uint32_t>(s.height));
  out.put_u32(static_cast<std::uint32_t>(s.width));
  out.put_f32_array(s.image);
  out.put_bytes(s.mask);
  return out.take();
}

Sample decode_sample(std::span<const std::uint8_t> bytes, const std::string& what) {
  ByteReader in(bytes, what);
  if (in.remaining() < kMagicLen || in.get_chars(kMagicLen) != std::string(kMagic, kMagicLen)) {
    throw FormatError(what + ": bad magic (not a SEGV1 file)");
  }
  const std::uint64_t h = in.get_u32();
  const std::uint64_t w = in.get_u32();
  if (h == 0 || w == 0 || h * w > kMaxPixels) {
    throw FormatError(fmt::format("{}: bad dimensions {}x{}", what, h, w));
  }
  Sample s;
  s.height = h;
  s.width = w;
  s.image.resize(h * w);
  in.get_f32_array(s.image);
  auto m = in.get_bytes(h * w);
  s.mask.assign(m.begin(), m.end());
  for (auto v : s.mask) {
    if (v > 1) throw FormatError(what + ": mask value other than 0/1");
  }
  if (!in.at_end()) throw FormatError(what + ": trailing bytes");
  return s;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json meta;
  meta["format"] = "SEGV1";
  meta["version"] = kFormatVersion;
  meta["count"] = dataset.samples.size();
  meta["height"] = dataset.samples.empty() ? 0 : dataset.samples[0].height;
  meta["width"] = dataset.samples.empty() ? 0 : dataset.samples[0].width;
  meta["config"] = to_json(dataset.config);
  nlohmann::json list = nlohmann::json::array();
  for (const Sample& s : dataset.samples) {
    const std::string file = fmt::format("sample_{:05d}.segv1", s.sample_id);
    write_file(dir / file, encode_sample(s));
    list.push_back({{"id", s.sample_id}, {"file", file}});
  }
  meta["samples"] = list;
  write_text_file(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto meta_path = dir / "meta.json";
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_text_file(meta_path));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(meta_path.string() + ": " + e.what());
  }
  if (meta.value("format", "") != "SEGV1") throw FormatError(meta_path.string() + ": not a SEGV1 dataset");
  if (meta.value("version", 0u) != kFormatVersion) {
    throw FormatError(meta_path.string() + ": unsupported format version");
  }
  Dataset d;
  if (meta.contains("config")) d.config = data_config_from_json(meta["config"]);
  if (!meta.contains("samples") || !meta["samples"].is_array()) {
    throw FormatError(meta_path.string() + ": missing sample list");
  }
  for (const auto& entry : meta["samples"]) {
    const std::string file = entry.at("file").get<std::string>();
    Sample s = decode_sample(read_file(dir / file), (dir / file).string());
    s.sample_id = entry.at("id").get<int>();
    if (!d.samples.empty() &&
        (s.height != d.samples[0].height || s.width != d.samples[0].width)) {
      throw FormatError(file + ": dimensions differ from the first sample");
    }
    d.samples.push_back(std::move(s));
  }
  if (!meta.contains("config") && !d.samples.empty()) {
    d.config.count = static_cast<int>(d.samples.size());
    d.config.height = static_cast<int>(d.samples[0].height);
    d.config.width = static_cast<int>(d.samples[0].width);
  }
  return d;
}

nlohmann::json to_json(const DataGenConfig& c) {
  return {{"count", c.count},
          {"height", c.height},
          {"width", c.width},
          {"labeled_fraction", c.labeled_fraction},
          {"noise_sigma", c.noise_sigma},
          {"bias_field_amp", c.bias_field_amp},
          {"blob_complexity", c.blob_complexity},
          {"seed", c.seed}};
}

DataGenConfig data_config_from_json(const nlohmann::json& j) {
  DataGenConfig c;
  JsonFields f(j, "data");
  f.get("count", c.count);
  f.get("height", c.height);
  f.get("width", c.width);
  f.get("labeled_fraction", c.labeled_fraction);
  f.get("noise_sigma", c.noise_sigma);
  f.get("bias_field_amp", c.bias_field_amp);
  f.get("blob_complexity", c.blob_complexity);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

}  // namespace pmt::synthdata
