#pragma once

// Internal helpers shared by the op translation units.

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/gradcore/kernels.hpp"
#include "pmt/gradcore/tensor.hpp"

namespace pmt::detail {

template <typename T>
using BackwardFn = std::function<void(Node<T>&)>;

// Wraps a computed value into a tensor, validating finiteness and recording
// the backward closure when any input requires grad and recording is on.
template <typename T>
BasicTensor<T> make_result(Shape shape, std::vector<T> value, const char* op,
                           std::initializer_list<const BasicTensor<T>*> inputs,
                           BackwardFn<T> backward) {
  if (!kernels::active<T>().all_finite(value.data(), value.size())) {
    throw NumericError(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const BasicTensor<T>* in : inputs) needs_grad = needs_grad || in->requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (const BasicTensor<T>* in : inputs) node->parents.push_back(in->node());
    node->backward = std::move(backward);
  }
  return BasicTensor<T>::from_node(std::move(node));
}

// Parent gradient store if that parent takes gradients, else nullptr.
template <typename T>
std::vector<T>* parent_grad(Node<T>& self, std::size_t i) {
  Node<T>& p = *self.parents[i];
  return p.requires_grad ? &p.ensure_grad() : nullptr;
}

}  // namespace pmt::detail
