#include "pmt/gradcore/sgd.hpp"

#include <cmath>

#include "pmt/gradcore/kernels.hpp"

namespace pmt {

template <typename T>
void BasicSgdState<T>::init(const BasicParamSet<T>& params) {
  velocity.clear();
  velocity.reserve(params.size());
  for (const auto& entry : params) velocity.emplace_back(entry.second.numel(), T(0));
}

template <typename T>
void BasicSgdState<T>::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("sgd: learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("sgd: momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("sgd: weight_decay must be >= 0");
}

template <typename T>
void sgd_step(BasicParamSet<T>& params, BasicSgdState<T>& state) {
  state.validate();
  if (state.velocity.empty()) state.init(params);
  if (state.velocity.size() != params.size()) {
    throw ShapeError("sgd: velocity count does not match parameter count");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, t] = params[i];
    if (!t.has_grad()) throw Error("sgd: missing gradient for parameter " + name);
    if (state.velocity[i].size() != t.numel()) {
      throw ShapeError("sgd: velocity shape mismatch for parameter " + name);
    }
  }
  const auto& k = kernels::active<T>();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& t = params[i].second;
    auto theta = t.mutable_data();
    k.sgd_update(theta.data(), state.velocity[i].data(), t.grad().data(), theta.size(),
                 static_cast<T>(state.learning_rate), static_cast<T>(state.momentum),
                 static_cast<T>(state.weight_decay));
  }
}

template <typename T>
double clip_grad_norm(BasicParamSet<T>& params, double max_norm) {
  if (!(max_norm > 0)) throw Error("clip_grad_norm: max_norm must be > 0");
  double sq = 0;
  for (const auto& entry : params) {
    if (!entry.second.has_grad()) continue;
    for (T g : entry.second.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& entry : params) {
      if (!entry.second.has_grad()) continue;
      for (T& g : entry.second.mutable_grad()) g *= scale;
    }
  }
  return norm;
}

template struct BasicSgdState<float>;
template struct BasicSgdState<double>;
template void sgd_step<float>(BasicParamSet<float>&, BasicSgdState<float>&);
template void sgd_step<double>(BasicParamSet<double>&, BasicSgdState<double>&);
template double clip_grad_norm<float>(BasicParamSet<float>&, double);
template double clip_grad_norm<double>(BasicParamSet<double>&, double);

}  // namespace pmt
