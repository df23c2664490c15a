#include "pmt/segnet/model_pair.hpp"

#include <algorithm>
#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/gradcore/kernels.hpp"
#include "pmt/gradcore/ops.hpp"

namespace pmt::segnet {

ModelPair ModelPair::create(const SegNetConfig& config, std::uint64_t seed, int pair_id,
                            double ema_alpha) {
  if (!(ema_alpha >= 0.0 && ema_alpha <= 1.0)) {
    throw ConfigError("model.ema_alpha must be in [0, 1]");
  }
  ModelPair pair;
  pair.config = config;
  pair.student = init_params<float>(config, seed);
  pair.teacher = pair.student.clone(false);
  pair.ema_alpha = ema_alpha;
  pair.pair_id = pair_id;
  return pair;
}

Tensor forward(const ModelPair& pair, Branch which, const Tensor& x, bool train_mode) {
  if (which == Branch::kStudent && train_mode) {
    return forward(pair.config, pair.student, x);
  }
  NoGradGuard no_grad;
  return forward(pair.config, which == Branch::kStudent ? pair.student : pair.teacher, x);
}

void ema_update(ModelPair& pair) {
  if (!pair.student.same_layout(pair.teacher)) {
    throw ShapeError("ema_update: student and teacher layouts differ");
  }
  const auto& k = kernels::active<float>();
  const float alpha = static_cast<float>(pair.ema_alpha);
  for (std::size_t i = 0; i < pair.student.size(); ++i) {
    auto t = pair.teacher[i].second.mutable_data();
    auto s = pair.student[i].second.data();
    k.ema_update(t.data(), s.data(), t.size(), alpha);
  }
}

AveragedPrediction infer_averaged(std::span<const ModelPair> pairs, const Tensor& x,
                                  double threshold) {
  if (pairs.empty()) throw Error("infer_averaged needs at least one model pair");
  NoGradGuard no_grad;
  Tensor total = forward(pairs[0], Branch::kStudent, x, false);
  for (std::size_t i = 1; i < pairs.size(); ++i) {
    total = add(total, forward(pairs[i], Branch::kStudent, x, false));
  }
  Tensor soft = pairs.size() == 1 ? total : mul(total, 1.0f / static_cast<float>(pairs.size()));
  Tensor mask = pmt::threshold(soft, static_cast<float>(threshold));
  return {soft, mask};
}

std::vector<std::size_t> window_origins(std::size_t extent, std::size_t window,
                                        std::size_t stride) {
  if (window == 0 || window > extent) throw ShapeError("window larger than image");
  if (stride == 0) throw ShapeError("sliding-window stride must be >= 1");
  // A stride wider than the window would skip pixels; clamp it.
  const std::size_t step = std::min(stride, window);
  std::vector<std::size_t> origins;
  for (std::size_t o = 0; o + window <= extent; o += step) origins.push_back(o);
  if (origins.back() + window < extent) origins.push_back(extent - window);
  return origins;
}

Tensor sliding_window(const Tensor& image, Extent2 window, Extent2 stride,
                      const WindowPredictor& predict) {
  if (image.rank() != 2) throw ShapeError("sliding_window expects an [H,W] image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  if (window.h > h || window.w > w) {
    throw ShapeError("window " + std::to_string(window.h) + "x" + std::to_string(window.w) +
                     " larger than image " + shape_str(image.shape()));
  }
  const auto ys = window_origins(h, window.h, stride.h);
  const auto xs = window_origins(w, window.w, stride.w);
  std::vector<double> acc(h * w, 0.0);
  std::vector<std::uint32_t> count(h * w, 0);
  const auto img = image.data();
  std::vector<float> crop(window.h * window.w);
  for (std::size_t y0 : ys) {
    for (std::size_t x0 : xs) {
      for (std::size_t y = 0; y < window.h; ++y) {
        for (std::size_t x = 0; x < window.w; ++x) {
          crop[y * window.w + x] = img[(y0 + y) * w + x0 + x];
        }
      }
      Tensor pred = predict(Tensor(Shape{1, 1, window.h, window.w}, crop));
      if (pred.numel() != window.h * window.w) {
        throw ShapeError("window predictor returned " + shape_str(pred.shape()));
      }
      const auto pv = pred.data();
      for (std::size_t y = 0; y < window.h; ++y) {
        for (std::size_t x = 0; x < window.w; ++x) {
          acc[(y0 + y) * w + x0 + x] += pv[y * window.w + x];
          ++count[(y0 + y) * w + x0 + x];
        }
      }
    }
  }
  std::vector<float> out(h * w);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<float>(acc[i] / static_cast<double>(count[i]));
  }
  return Tensor(Shape{h, w}, std::move(out));
}

Tensor infer_sliding(std::span<const ModelPair> pairs, const Tensor& image, Extent2 window,
                     Extent2 stride) {
  if (pairs.empty()) throw Error("infer_sliding needs at least one model pair");
  return sliding_window(image, window, stride, [&](const Tensor& crop) {
    return infer_averaged(pairs, crop).soft;
  });
}

}  // namespace pmt::segnet
