#pragma once

// Supervised, consistency and alignment losses plus the loss-weight schedule.
//
// Probability maps are [N, ...] tensors with the batch on axis 0 (rank-1
// tensors count as a single sample). Targets, masks and sharpened
// pseudo-labels are constants: no gradient ever flows into them.

#include <span>

#include "pmt/gradcore/tensor.hpp"

namespace pmt::losses {

inline constexpr double kLogClamp = 1e-7;
inline constexpr double kDiceSmooth = 1e-5;

struct LossWeights {
  double lambda1_hat = 20.0;  // pseudo-label loss ceiling
  double lambda2_hat = 10.0;  // teacher consistency ceiling
  double beta = 0.5;          // alignment weight inside the supervised loss
  double temperature = 0.1;   // sharpening temperature
  long t_max = 2000;          // warm-up horizon

  void validate() const;
};

struct LossBreakdown {
  double l_ce = 0, l_dice = 0, l_aln = 0, l_u = 0, l_t = 0;
  double l_s = 0, l_total = 0;
  int plf_pass = 0;
  double lambda1_t = 0, lambda2_t = 0;
};

// Which optional terms take part (ablation switches).
struct TermSwitches {
  bool align = true;
  bool unsup = true;
  bool teacher = true;
};

struct LossParts {
  double ce = 0, dice = 0, aln = 0, u = 0, t = 0;
};

// Mean binary cross-entropy with log arguments clamped to [1e-7, 1 - 1e-7].
template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

// 1 - (2 sum(p y) + eps) / (sum p + sum y + eps) per sample, averaged over
// the batch; eps = 1e-5.
template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target);

// p^(1/T) / (p^(1/T) + (1-p)^(1/T)) elementwise, as a constant tensor.
template <typename T>
BasicTensor<T> sharpen(const BasicTensor<T>& p, double temperature);

// MSE between the current model's unlabeled prediction and the sharpened
// peer prediction.
template <typename T>
BasicTensor<T> unsup_loss(const BasicTensor<T>& cpm_pred_u, const BasicTensor<T>& peer_pred_u,
                          double temperature);

// Union minus intersection of the binarized (p > threshold) predictions.
template <typename T>
BasicTensor<T> dda_mask(std::span<const BasicTensor<T>> preds, double threshold = 0.5);

// sum(mask * (pred - gt)^2) / sum(mask), or 0 when the mask is empty.
template <typename T>
BasicTensor<T> dda_align_loss(const BasicTensor<T>& cpm_pred_l, const BasicTensor<T>& gt_l,
                              const BasicTensor<T>& m_diff);

// MSE between the student prediction and the sharpened teacher prediction.
template <typename T>
BasicTensor<T> teacher_consistency(const BasicTensor<T>& student_pred_u,
                                   const BasicTensor<T>& teacher_pred_u, double temperature);

// hat * exp(-5 (1 - 2t/t_max)^2) for t < t_max/2, hat afterwards.
double warmup(long t, long t_max, double hat);

// L_s = ce + dice + beta * plf * aln
// L_total = L_s + lambda1(t) * plf * u + lambda2(t) * t
// Disabled terms contribute nothing and are recorded as zero.
LossBreakdown assemble_total(const LossParts& parts, const LossWeights& weights, long t,
                             int plf_pass, TermSwitches on = {});

// Differentiable counterpart of assemble_total. Tensors for disabled or
// gated terms may be undefined; they are never added.
template <typename T>
struct LossTensors {
  BasicTensor<T> ce, dice, aln, u, t;
};

template <typename T>
BasicTensor<T> total_loss(const LossTensors<T>& parts, const LossBreakdown& weights_used,
                          double beta, TermSwitches on);

}  // namespace pmt::losses
