#pragma once

// Dice, Jaccard, 95% Hausdorff distance and average surface distance for
// binary 2D masks, plus whole-test-set evaluation reports.
//
// Surface: foreground pixels with at least one background 4-neighbour; the
// outside of the image counts as background. Surface distances are pooled
// in both directions; HD95 is the 95th percentile of the pooled multiset with
// linear interpolation between order statistics, ASD its mean.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "pmt/gradcore/tensor.hpp"
#include "pmt/segnet/model_pair.hpp"
#include "pmt/synthdata/synthdata.hpp"

namespace pmt::segmetrics {

struct MaskView {
  std::span<const std::uint8_t> data;  // nonzero = foreground
  std::size_t height = 0;
  std::size_t width = 0;
};

struct Point {
  int y = 0;
  int x = 0;
  bool operator==(const Point&) const = default;
};

// Both empty -> (1, 1).
std::pair<double, double> dice_jaccard(MaskView pred, MaskView gt);

// Row-major scan order. Throws on an empty mask.
std::vector<Point> surface(MaskView mask);

struct SurfaceDistances {
  double hd95 = 0;
  double asd = 0;
};

// Pooled directed distances: every pred-surface point to the nearest
// gt-surface point, then every gt-surface point to the nearest pred-surface
// point. Throws if either mask is empty.
std::vector<double> pooled_surface_distances(MaskView pred, MaskView gt, double spacing = 1.0);
SurfaceDistances hd95_asd(MaskView pred, MaskView gt, double spacing = 1.0);

// All-pairs reference implementation of the above.
std::vector<double> pooled_surface_distances_bruteforce(MaskView pred, MaskView gt,
                                                        double spacing = 1.0);
SurfaceDistances hd95_asd_bruteforce(MaskView pred, MaskView gt, double spacing = 1.0);

// Linear interpolation between order statistics at rank q*(n-1).
double percentile_linear(std::vector<double> values, double q);

// Squared Euclidean distance from every pixel to the nearest site (exact,
// separable lower-envelope transform). No sites -> +inf everywhere.
std::vector<double> squared_distance_transform(MaskView sites);

struct EvalConfig {
  double threshold = 0.5;
  bool sliding = false;
  int window_h = 0;  // 0 = full image
  int window_w = 0;
  int stride_h = 16;
  int stride_w = 16;
  double spacing = 1.0;
  int batch_size = 8;

  void validate() const;
};

struct SampleMetrics {
  int sample_id = 0;
  double dice = 0, jaccard = 0, hd95 = 0, asd = 0;
  std::string flags;  // empty_pred / empty_gt, ';'-joined
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // sample standard deviation, 0 for n < 2
  std::size_t n = 0;
  std::size_t excluded = 0;
};

struct MetricReport {
  std::vector<SampleMetrics> samples;
  Aggregate dice, jaccard, hd95, asd;
  nlohmann::json config;

  std::string to_csv() const;
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& csv_path) const;  // also writes the .json mirror
};

Aggregate aggregate(std::span<const double> values);  // NaN entries are excluded

SampleMetrics evaluate_sample(int sample_id, MaskView pred, MaskView gt, double spacing = 1.0);

// Per-sample binary predictions against the dataset's masks.
MetricReport evaluate_masks(const synthdata::Dataset& data, std::span<const std::size_t> indices,
                            std::span<const std::vector<std::uint8_t>> pred_masks,
                            const EvalConfig& eval, nlohmann::json config_echo = {});

// Maps a [N,1,H,W] image batch to [N,1,H,W] probabilities.
using SoftPredictor = std::function<Tensor(const Tensor&)>;

MetricReport evaluate_run(const SoftPredictor& predict, const synthdata::Dataset& data,
                          std::span<const std::size_t> indices, const EvalConfig& eval,
                          nlohmann::json config_echo = {});
// Student outputs of all pairs averaged (sliding-window when configured).
MetricReport evaluate_run(std::span<const segnet::ModelPair> pairs, const synthdata::Dataset& data,
                          std::span<const std::size_t> indices, const EvalConfig& eval,
                          nlohmann::json config_echo = {});

nlohmann::json to_json(const EvalConfig& c);
EvalConfig eval_config_from_json(const nlohmann::json& j);

}  // namespace pmt::segmetrics
