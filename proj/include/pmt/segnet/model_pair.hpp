#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>

#include "pmt/gradcore/param_set.hpp"
#include "pmt/segnet/segnet.hpp"

namespace pmt::segnet {

enum class Branch { kStudent, kTeacher };

// A student network and its exponential-moving-average teacher.
struct ModelPair {
  SegNetConfig config;
  ParamSet student;
  ParamSet teacher;
  double ema_alpha = 0.99;
  int pair_id = 0;

  // Fresh student from `seed`; the teacher starts as an exact copy.
  static ModelPair create(const SegNetConfig& config, std::uint64_t seed, int pair_id,
                          double ema_alpha = 0.99);
};

// Probabilities [N,1,H,W]. Only a student forward with train_mode=true
// records a graph; teacher forwards never do.
Tensor forward(const ModelPair& pair, Branch which, const Tensor& x, bool train_mode);

// teacher <- alpha * teacher + (1 - alpha) * student, every parameter.
void ema_update(ModelPair& pair);

struct AveragedPrediction {
  Tensor soft;  // mean of the student probability maps
  Tensor mask;  // 1 where soft > threshold
};

// Averages the student outputs of all pairs, then thresholds.
AveragedPrediction infer_averaged(std::span<const ModelPair> pairs, const Tensor& x,
                                  double threshold = 0.5);

struct Extent2 {
  std::size_t h = 0;
  std::size_t w = 0;
};

// Maps a [1,1,h,w] window to a [1,1,h,w] soft prediction.
using WindowPredictor = std::function<Tensor(const Tensor&)>;

// Sliding-window inference over an [H,W] image. Window origins advance by the
// stride; the last origin along each axis is clamped to the image edge so every
// pixel is covered. Overlaps are averaged by coverage count. Returns [H,W].
Tensor sliding_window(const Tensor& image, Extent2 window, Extent2 stride,
                      const WindowPredictor& predict);

// sliding_window with infer_averaged's soft map as the predictor.
Tensor infer_sliding(std::span<const ModelPair> pairs, const Tensor& image, Extent2 window,
                     Extent2 stride);

// Window origins along one axis: every `stride` (at most `window`), plus a
// final window flush with the far edge.
std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window,
                                        std::size_t stride);

}  // namespace pmt::segnet
