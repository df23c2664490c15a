#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pmt/core/error.hpp"
#include "pmt/gradcore/tensor.hpp"

namespace pmt {

// Ordered, uniquely named collection of parameter tensors. Iteration order is
// insertion order and is what checkpoints serialize.
template <typename T>
class BasicParamSet {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  void add(std::string name, BasicTensor<T> value) {
    if (find(name) != nullptr) throw Error("duplicate parameter name: " + name);
    entries_.emplace_back(std::move(name), std::move(value));
  }

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  Entry& operator[](std::size_t i) { return entries_[i]; }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }

  BasicTensor<T>* find(const std::string& name) {
    for (auto& e : entries_) {
      if (e.first == name) return &e.second;
    }
    return nullptr;
  }
  const BasicTensor<T>* find(const std::string& name) const {
    return const_cast<BasicParamSet*>(this)->find(name);
  }
  const BasicTensor<T>& at(const std::string& name) const {
    const BasicTensor<T>* t = find(name);
    if (!t) throw Error("no parameter named " + name);
    return *t;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& e : entries_) n += e.second.numel();
    return n;
  }

  // Deep copy; every tensor becomes a fresh leaf.
  BasicParamSet clone(bool requires_grad) const {
    BasicParamSet out;
    for (const auto& [name, t] : entries_) {
      BasicTensor<T> c = t.detach();
      c.set_requires_grad(requires_grad);
      out.add(name, std::move(c));
    }
    return out;
  }

  void zero_grad() {
    for (auto& e : entries_) e.second.zero_grad();
  }

  bool same_layout(const BasicParamSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (entries_[i].first != other.entries_[i].first ||
          entries_[i].second.shape() != other.entries_[i].second.shape()) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

using ParamSet = BasicParamSet<float>;
using ParamSetD = BasicParamSet<double>;

}  // namespace pmt
