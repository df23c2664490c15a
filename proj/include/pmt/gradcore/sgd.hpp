#pragma once

#include <vector>

#include "pmt/gradcore/param_set.hpp"

namespace pmt {

// Momentum SGD state for one parameter set.
//
// Update rule, applied per element:
//   v     <- momentum * v + g + weight_decay * theta
//   theta <- theta - learning_rate * v
// Weight decay is an L2 term added to the gradient, not decoupled.
template <typename T>
struct BasicSgdState {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::vector<std::vector<T>> velocity;  // one buffer per parameter, lazily sized

  // Sizes the velocity buffers to match `params` (zeros).
  void init(const BasicParamSet<T>& params);
  void validate() const;
};

using SgdState = BasicSgdState<float>;

// Applies one update to every parameter. Throws if a parameter has no
// gradient or the velocity layout does not match.
template <typename T>
void sgd_step(BasicParamSet<T>& params, BasicSgdState<T>& state);

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before rescaling. Parameters without a gradient are
// skipped.
template <typename T>
double clip_grad_norm(BasicParamSet<T>& params, double max_norm);

}  // namespace pmt
