#include "pmt/losses/losses.hpp"

#include <cmath>
#include <string>
#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/gradcore/ops.hpp"

namespace pmt::losses {
namespace {

template <typename T>
void check_same(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (!a.defined() || !b.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

// [N, ...] view with a batch axis; rank-1 and rank-0 become a single sample.
template <typename T>
BasicTensor<T> batched(const BasicTensor<T>& a) {
  if (a.rank() >= 2) return a;
  return reshape(a, Shape{1, a.numel()});
}

}  // namespace

void LossWeights::validate() const {
  if (!(lambda1_hat >= 0)) throw ConfigError("weights.lambda1_hat must be >= 0");
  if (!(lambda2_hat >= 0)) throw ConfigError("weights.lambda2_hat must be >= 0");
  if (!(beta >= 0)) throw ConfigError("weights.beta must be >= 0");
  if (!(temperature > 0)) throw ConfigError("weights.temperature must be > 0");
  if (t_max < 1) throw ConfigError("weights.t_max must be >= 1");
}

template <typename T>
BasicTensor<T> ce_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  check_same(pred, target, "ce_loss");
  const BasicTensor<T> y = target.detach();
  const BasicTensor<T> p = clamp(pred, T(kLogClamp), T(1 - kLogClamp));
  BasicTensor<T> ll = y * log(p) + (T(1) - y) * log(T(1) - p);
  return neg(mean(ll));
}

template <typename T>
BasicTensor<T> dice_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  check_same(pred, target, "dice_loss");
  const BasicTensor<T> p = batched(pred);
  const BasicTensor<T> y = batched(target.detach());
  const T eps = T(kDiceSmooth);
  BasicTensor<T> num = sum_rows(p * y) * T(2) + eps;
  BasicTensor<T> den = sum_rows(p) + sum_rows(y) + eps;
  return mean(T(1) - num / den);
}

template <typename T>
BasicTensor<T> mse_loss(const BasicTensor<T>& pred, const BasicTensor<T>& target) {
  check_same(pred, target, "mse_loss");
  BasicTensor<T> d = pred - target.detach();
  return mean(d * d);
}

template <typename T>
BasicTensor<T> sharpen(const BasicTensor<T>& p, double temperature) {
  if (!(temperature > 0)) throw Error("sharpen: temperature must be > 0");
  if (!p.defined()) throw ShapeError("sharpen: undefined tensor");
  const double e = 1.0 / temperature;
  const auto in = p.data();
  std::vector<T> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) {
    const double v = static_cast<double>(in[i]);
    if (!(v >= 0.0 && v <= 1.0)) throw NumericError("sharpen: input outside [0,1]");
    const double a = std::pow(v, e);
    const double b = std::pow(1.0 - v, e);
    // One of v, 1-v is >= 0.5, so a + b > 0 unless e is huge; fall back to
    // the hard decision then.
    out[i] = (a + b > 0.0) ? static_cast<T>(a / (a + b)) : (v > 0.5 ? T(1) : (v < 0.5 ? T(0) : T(0.5)));
  }
  return BasicTensor<T>(p.shape(), std::move(out));
}

template <typename T>
BasicTensor<T> unsup_loss(const BasicTensor<T>& cpm_pred_u, const BasicTensor<T>& peer_pred_u,
                          double temperature) {
  check_same(cpm_pred_u, peer_pred_u, "unsup_loss");
  return mse_loss(cpm_pred_u, sharpen(peer_pred_u, temperature));
}

template <typename T>
BasicTensor<T> dda_mask(std::span<const BasicTensor<T>> preds, double threshold) {
  if (preds.size() < 2) throw Error("dda_mask needs at least 2 prediction maps");
  for (const auto& p : preds) check_same(preds[0], p, "dda_mask");
  const std::size_t n = preds[0].numel();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    bool any = false, all = true;
    for (const auto& p : preds) {
      const bool b = static_cast<double>(p.data()[i]) > threshold;
      any = any || b;
      all = all && b;
    }
    out[i] = (any && !all) ? T(1) : T(0);
  }
  return BasicTensor<T>(preds[0].shape(), std::move(out));
}

template <typename T>
BasicTensor<T> dda_align_loss(const BasicTensor<T>& cpm_pred_l, const BasicTensor<T>& gt_l,
                              const BasicTensor<T>& m_diff) {
  check_same(cpm_pred_l, gt_l, "dda_align_loss");
  check_same(cpm_pred_l, m_diff, "dda_align_loss");
  double count = 0;
  for (T v : m_diff.data()) count += static_cast<double>(v);
  if (count == 0) return BasicTensor<T>::scalar(T(0));
  BasicTensor<T> d = cpm_pred_l - gt_l.detach();
  return sum(m_diff.detach() * (d * d)) * T(1.0 / count);
}

template <typename T>
BasicTensor<T> teacher_consistency(const BasicTensor<T>& student_pred_u,
                                   const BasicTensor<T>& teacher_pred_u, double temperature) {
  check_same(student_pred_u, teacher_pred_u, "teacher_consistency");
  return mse_loss(student_pred_u, sharpen(teacher_pred_u, temperature));
}

double warmup(long t, long t_max, double hat) {
  if (t_max <= 0) throw Error("warmup: t_max must be > 0");
  if (t < 0) throw Error("warmup: t must be >= 0");
  const double tt = static_cast<double>(t);
  const double tm = static_cast<double>(t_max);
  if (2.0 * tt < tm) {
    const double r = 1.0 - 2.0 * tt / tm;
    return hat * std::exp(-5.0 * r * r);
  }
  return hat;
}

LossBreakdown assemble_total(const LossParts& parts, const LossWeights& w, long t, int plf_pass,
                             TermSwitches on) {
  LossBreakdown b;
  b.l_ce = parts.ce;
  b.l_dice = parts.dice;
  b.l_aln = on.align ? parts.aln : 0.0;
  b.l_u = on.unsup ? parts.u : 0.0;
  b.l_t = on.teacher ? parts.t : 0.0;
  b.plf_pass = plf_pass ? 1 : 0;
  b.lambda1_t = warmup(t, w.t_max, w.lambda1_hat);
  b.lambda2_t = warmup(t, w.t_max, w.lambda2_hat);
  const double plf = b.plf_pass;
  b.l_s = b.l_ce + b.l_dice + w.beta * plf * b.l_aln;
  b.l_total = b.l_s + b.lambda1_t * plf * b.l_u + b.lambda2_t * b.l_t;
  return b;
}

template <typename T>
BasicTensor<T> total_loss(const LossTensors<T>& parts, const LossBreakdown& b, double beta,
                          TermSwitches on) {
  BasicTensor<T> total = parts.ce + parts.dice;
  if (b.plf_pass && on.align && parts.aln.defined() && beta != 0.0) {
    total = total + parts.aln * T(beta);
  }
  if (b.plf_pass && on.unsup && parts.u.defined()) {
    total = total + parts.u * T(b.lambda1_t);
  }
  if (on.teacher && parts.t.defined()) {
    total = total + parts.t * T(b.lambda2_t);
  }
  return total;
}

#define PMT_INSTANTIATE_LOSSES(T)                                                              \
  template BasicTensor<T> ce_loss(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> dice_loss(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> mse_loss(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template BasicTensor<T> sharpen(const BasicTensor<T>&, double);                             \
  template BasicTensor<T> unsup_loss(const BasicTensor<T>&, const BasicTensor<T>&, double);   \
  template BasicTensor<T> dda_mask(std::span<const BasicTensor<T>>, double);                  \
  template BasicTensor<T> dda_align_loss(const BasicTensor<T>&, const BasicTensor<T>&,        \
                                         const BasicTensor<T>&);                              \
  template BasicTensor<T> teacher_consistency(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                              double);                                        \
  template BasicTensor<T> total_loss(const LossTensors<T>&, const LossBreakdown&, double,     \
                                     TermSwitches);

PMT_INSTANTIATE_LOSSES(float)
PMT_INSTANTIATE_LOSSES(double)

}  // namespace pmt::losses
