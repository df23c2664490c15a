#pragma once

// Synthetic 2D binary segmentation data: star-convex blobs on a biased,
// noisy background. Every sample is a pure function of (seed, sample_id).

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace pmt::synthdata {

struct DataGenConfig {
  int count = 200;
  int height = 64;
  int width = 64;
  double labeled_fraction = 0.1;
  double noise_sigma = 0.15;
  double bias_field_amp = 0.2;
  int blob_complexity = 4;  // Fourier modes of the blob outline
  std::uint64_t seed = 0;

  // `factor` is the network's spatial downsampling factor.
  void validate(std::size_t factor = 1) const;
};

inline constexpr double kMinForeground = 0.02;
inline constexpr double kMaxForeground = 0.6;
inline constexpr int kMaxAttempts = 100;
inline constexpr float kInsideIntensity = 0.7f;
inline constexpr float kOutsideIntensity = 0.3f;

struct Sample {
  int sample_id = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> image;         // standardized, row-major
  std::vector<std::uint8_t> mask;   // 0/1, row-major
  bool is_labeled = false;

  double foreground_fraction() const;
};

struct Dataset {
  DataGenConfig config;
  std::vector<Sample> samples;
};

// `raw`, when given, receives the image before standardization.
Sample generate_sample(const DataGenConfig& config, int sample_id,
                       std::vector<double>* raw = nullptr);
Dataset generate(const DataGenConfig& config);

// Positions into Dataset::samples, each list ascending.
struct Split {
  std::vector<std::size_t> labeled;
  std::vector<std::size_t> unlabeled;
  std::vector<std::size_t> test;
};

// First 80% (floor) of a seeded permutation trains, the rest tests;
// round(labeled_fraction * n_train) of the training part is labeled.
Split split(std::size_t count, double labeled_fraction, std::uint64_t seed);
// Also sets Sample::is_labeled.
Split split(Dataset& dataset, double labeled_fraction, std::uint64_t seed);

// SEGV1 per-sample binary: "SEGV1", u32 H, u32 W, f32 image[H*W], u8 mask[H*W].
std::vector<std::uint8_t> encode_sample(const Sample& s);
Sample decode_sample(std::span<const std::uint8_t> bytes, const std::string& what);

// Directory layout: meta.json plus one .segv1 file per sample.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

nlohmann::json to_json(const DataGenConfig& c);
// Rejects unknown keys; missing keys keep their defaults.
DataGenConfig data_config_from_json(const nlohmann::json& j);

}  // namespace pmt::synthdata
