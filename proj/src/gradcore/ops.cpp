#include "pmt/gradcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "op_support.hpp"

namespace pmt {

using detail::make_result;
using detail::Node;
using detail::parent_grad;

namespace {

enum class Bcast { kSame, kLeftScalar, kRightScalar };

template <typename T>
Bcast classify(const BasicTensor<T>& a, const BasicTensor<T>& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (a.rank() == 0) return Bcast::kLeftScalar;
  if (b.rank() == 0) return Bcast::kRightScalar;
  throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                   " vs " + shape_str(b.shape()));
}

template <typename T>
const Shape& result_shape(const BasicTensor<T>& a, const BasicTensor<T>& b, Bcast bc) {
  return bc == Bcast::kLeftScalar ? b.shape() : a.shape();
}

// Elementwise value at i under broadcasting.
template <typename T>
inline T at(const std::vector<T>& v, std::size_t i) {
  return v.size() == 1 ? v[0] : v[i];
}

template <typename T>
void accumulate(std::vector<T>* dst, const std::vector<T>& g, T sign) {
  if (!dst) return;
  if (dst->size() == g.size()) {
    kernels::active<T>().axpy(sign, g.data(), dst->data(), g.size());
  } else {
    (*dst)[0] += sign * static_cast<T>(kernels::active<T>().sum(g.data(), g.size()));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Bcast bc = classify(a, b, "add");
  Shape shape = result_shape(a, b, bc);
  std::vector<T> out(shape_numel(shape));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  if (bc == Bcast::kSame) {
    kernels::active<T>().add(av.data(), bv.data(), out.data(), out.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(av, i) + at(bv, i);
  }
  return make_result<T>(std::move(shape), std::move(out), "add", {&a, &b}, [](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, T(1));
    accumulate(parent_grad(self, 1), self.grad, T(1));
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Bcast bc = classify(a, b, "sub");
  Shape shape = result_shape(a, b, bc);
  std::vector<T> out(shape_numel(shape));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  if (bc == Bcast::kSame) {
    kernels::active<T>().sub(av.data(), bv.data(), out.data(), out.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(av, i) - at(bv, i);
  }
  return make_result<T>(std::move(shape), std::move(out), "sub", {&a, &b}, [](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, T(1));
    accumulate(parent_grad(self, 1), self.grad, T(-1));
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Bcast bc = classify(a, b, "mul");
  Shape shape = result_shape(a, b, bc);
  std::vector<T> out(shape_numel(shape));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  if (bc == Bcast::kSame) {
    kernels::active<T>().mul(av.data(), bv.data(), out.data(), out.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(av, i) * at(bv, i);
  }
  return make_result<T>(std::move(shape), std::move(out), "mul", {&a, &b}, [](Node<T>& self) {
    const auto& k = kernels::active<T>();
    const auto& g = self.grad;
    for (std::size_t side = 0; side < 2; ++side) {
      std::vector<T>* dst = parent_grad(self, side);
      if (!dst) continue;
      const auto& other = self.parents[1 - side]->value;
      if (dst->size() == g.size() && other.size() == g.size()) {
        k.mul_acc(g.data(), other.data(), dst->data(), g.size());
      } else if (dst->size() == g.size()) {
        k.axpy(other[0], g.data(), dst->data(), g.size());
      } else {
        (*dst)[0] += static_cast<T>(other.size() == 1 ? other[0] * k.sum(g.data(), g.size())
                                                       : k.dot(g.data(), other.data(), g.size()));
      }
    }
  });
}

template <typename T>
BasicTensor<T> div(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Bcast bc = classify(a, b, "div");
  Shape shape = result_shape(a, b, bc);
  std::vector<T> out(shape_numel(shape));
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(av, i) / at(bv, i);
  return make_result<T>(std::move(shape), std::move(out), "div", {&a, &b}, [](Node<T>& self) {
    const auto& g = self.grad;
    const auto& bv = self.parents[1]->value;
    const auto& y = self.value;
    if (std::vector<T>* ga = parent_grad(self, 0)) {
      if (ga->size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] / at(bv, i);
      } else {
        T s = 0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] / at(bv, i);
        (*ga)[0] += s;
      }
    }
    if (std::vector<T>* gb = parent_grad(self, 1)) {
      if (gb->size() == g.size()) {
        for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] -= g[i] * y[i] / bv[i];
      } else {
        T s = 0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * y[i];
        (*gb)[0] -= s / bv[0];
      }
    }
  });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v += s;
  return make_result<T>(a.shape(), std::move(out), "add_scalar", {&a}, [](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, T(1));
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  kernels::active<T>().scale(a.data().data(), s, out.data(), out.size());
  return make_result<T>(a.shape(), std::move(out), "mul_scalar", {&a}, [s](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, s);
  });
}

template <typename T>
BasicTensor<T> rsub(T s, const BasicTensor<T>& a) {
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = s - v;
  return make_result<T>(a.shape(), std::move(out), "rsub_scalar", {&a}, [](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, T(-1));
  });
}

template <typename T>
BasicTensor<T> pow(const BasicTensor<T>& a, T e) {
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::pow(av[i], e);
  return make_result<T>(a.shape(), std::move(out), "pow", {&a}, [e](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      (*ga)[i] += self.grad[i] * e * std::pow(x[i], e - T(1));
    }
  });
}

template <typename T>
BasicTensor<T> exp(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(av[i]);
  return make_result<T>(a.shape(), std::move(out), "exp", {&a}, [](Node<T>& self) {
    if (std::vector<T>* ga = parent_grad(self, 0)) {
      kernels::active<T>().mul_acc(self.grad.data(), self.value.data(), ga->data(), ga->size());
    }
  });
}

template <typename T>
BasicTensor<T> log(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(av[i]);
  return make_result<T>(a.shape(), std::move(out), "log", {&a}, [](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] / x[i];
  });
}

template <typename T>
BasicTensor<T> neg(const BasicTensor<T>& a) {
  return mul(a, T(-1));
}

template <typename T>
BasicTensor<T> clamp(const BasicTensor<T>& a, T lo, T hi) {
  if (!(lo <= hi)) throw Error("clamp: lo must not exceed hi");
  std::vector<T> out(a.data().begin(), a.data().end());
  for (T& v : out) v = std::clamp(v, lo, hi);
  return make_result<T>(a.shape(), std::move(out), "clamp", {&a}, [lo, hi](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& x = self.parents[0]->value;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] >= lo && x[i] <= hi) (*ga)[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  const auto& av = a.node()->value;
  const T s = static_cast<T>(kernels::active<T>().sum(av.data(), av.size()));
  return make_result<T>(Shape{}, std::vector<T>{s}, "sum", {&a}, [](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const T g = self.grad[0];
    for (T& v : *ga) v += g;
  });
}

template <typename T>
BasicTensor<T> mean(const BasicTensor<T>& a) {
  const auto& av = a.node()->value;
  const double n = static_cast<double>(av.size());
  const T m = static_cast<T>(kernels::active<T>().sum(av.data(), av.size()) / n);
  return make_result<T>(Shape{}, std::vector<T>{m}, "mean", {&a}, [](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const T g = self.grad[0] / static_cast<T>(ga->size());
    for (T& v : *ga) v += g;
  });
}

template <typename T>
BasicTensor<T> sum_rows(const BasicTensor<T>& a) {
  if (a.rank() < 1) throw ShapeError("sum_rows needs rank >= 1");
  const std::size_t rows = a.dim(0);
  const std::size_t cols = a.numel() / rows;
  const auto& av = a.node()->value;
  std::vector<T> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    out[r] = static_cast<T>(kernels::active<T>().sum(av.data() + r * cols, cols));
  }
  return make_result<T>(Shape{rows}, std::move(out), "sum_rows", {&a}, [cols](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    for (std::size_t r = 0; r < self.grad.size(); ++r) {
      T* dst = ga->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) dst[c] += self.grad[r];
    }
  });
}

template <typename T>
BasicTensor<T> concat(const std::vector<BasicTensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == axis || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
    }
    shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];

  std::vector<std::size_t> widths;
  widths.reserve(parts.size());
  for (const auto& p : parts) widths.push_back(p.dim(axis) * inner);
  const std::size_t out_width = shape[axis] * inner;

  std::vector<T> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& pv = parts[k].node()->value;
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * widths[k], widths[k], out.data() + o * out_width + offset);
    }
    offset += widths[k];
  }

  // Inputs are passed through an initializer list of pointers, so concat
  // builds its node by hand for an arbitrary part count.
  if (!kernels::active<T>().all_finite(out.data(), out.size())) {
    throw NumericError("non-finite value produced by concat");
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(out);
  node->op = "concat";
  bool needs_grad = false;
  if (GradMode::enabled()) {
    for (const auto& p : parts) needs_grad = needs_grad || p.requires_grad();
  }
  if (needs_grad) {
    node->requires_grad = true;
    for (const auto& p : parts) node->parents.push_back(p.node());
    node->backward = [widths, outer, out_width](Node<T>& self) {
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.parents.size(); ++k) {
        if (std::vector<T>* gp = parent_grad(self, k)) {
          for (std::size_t o = 0; o < outer; ++o) {
            kernels::active<T>().axpy(T(1), self.grad.data() + o * out_width + off,
                                      gp->data() + o * widths[k], widths[k]);
          }
        }
        off += widths[k];
      }
    };
  }
  return BasicTensor<T>::from_node(std::move(node));
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& a, std::size_t axis, std::size_t begin,
                     std::size_t end) {
  const Shape& in = a.shape();
  if (axis >= in.size()) throw ShapeError("slice axis out of range");
  if (begin >= end || end > in[axis]) {
    throw ShapeError("slice range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for extent " + std::to_string(in[axis]));
  }
  Shape shape = in;
  shape[axis] = end - begin;
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= in[d];
  for (std::size_t d = axis + 1; d < in.size(); ++d) inner *= in[d];
  const std::size_t in_width = in[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t offset = begin * inner;

  const auto& av = a.node()->value;
  std::vector<T> out(outer * width);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(av.data() + o * in_width + offset, width, out.data() + o * width);
  }
  return make_result<T>(std::move(shape), std::move(out), "slice", {&a},
                        [outer, in_width, width, offset](Node<T>& self) {
                          std::vector<T>* ga = parent_grad(self, 0);
                          if (!ga) return;
                          for (std::size_t o = 0; o < outer; ++o) {
                            kernels::active<T>().axpy(T(1), self.grad.data() + o * width,
                                                      ga->data() + o * in_width + offset, width);
                          }
                        });
}

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape " + shape_str(a.shape()) + " -> " + shape_str(shape));
  }
  std::vector<T> out(a.data().begin(), a.data().end());
  return make_result<T>(std::move(shape), std::move(out), "reshape", {&a}, [](Node<T>& self) {
    accumulate(parent_grad(self, 0), self.grad, T(1));
  });
}

template <typename T>
BasicTensor<T> threshold(const BasicTensor<T>& a, T thr) {
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > thr ? T(1) : T(0);
  return BasicTensor<T>(a.shape(), std::move(out), false);
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  std::vector<T> out(a.numel());
  kernels::active<T>().relu(a.data().data(), out.data(), out.size());
  return make_result<T>(a.shape(), std::move(out), "relu", {&a}, [](Node<T>& self) {
    if (std::vector<T>* ga = parent_grad(self, 0)) {
      kernels::active<T>().relu_backward(self.parents[0]->value.data(), self.grad.data(),
                                         ga->data(), ga->size());
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  // Saturates at the representable neighbours of 0 and 1 so the result stays
  // strictly inside (0, 1).
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  std::vector<T> out(a.numel());
  const auto& av = a.node()->value;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x = av[i];
    T y;
    if (x >= T(0)) {
      y = T(1) / (T(1) + std::exp(-x));
    } else {
      const T e = std::exp(x);
      y = e / (T(1) + e);
    }
    out[i] = std::clamp(y, lo, hi);
  }
  return make_result<T>(a.shape(), std::move(out), "sigmoid", {&a}, [](Node<T>& self) {
    std::vector<T>* ga = parent_grad(self, 0);
    if (!ga) return;
    const auto& y = self.value;
    for (std::size_t i = 0; i < y.size(); ++i) (*ga)[i] += self.grad[i] * y[i] * (T(1) - y[i]);
  });
}

template <typename T>
BasicTensor<T> upsample2x(const BasicTensor<T>& a) {
  if (a.rank() != 4) throw ShapeError("upsample2x expects NCHW, got " + shape_str(a.shape()));
  const std::size_t planes = a.dim(0) * a.dim(1);
  const std::size_t h = a.dim(2), w = a.dim(3);
  const std::size_t oh = 2 * h, ow = 2 * w;
  const auto& av = a.node()->value;
  std::vector<T> out(planes * oh * ow);
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = av.data() + pl * h * w;
    T* dst = out.data() + pl * oh * ow;
    for (std::size_t y = 0; y < h; ++y) {
      T* row0 = dst + (2 * y) * ow;
      for (std::size_t x = 0; x < w; ++x) row0[2 * x] = row0[2 * x + 1] = src[y * w + x];
      std::copy_n(row0, ow, row0 + ow);
    }
  }
  Shape shape{a.dim(0), a.dim(1), oh, ow};
  return make_result<T>(std::move(shape), std::move(out), "upsample2x", {&a},
                        [planes, h, w](Node<T>& self) {
                          std::vector<T>* ga = parent_grad(self, 0);
                          if (!ga) return;
                          const std::size_t ow = 2 * w;
                          for (std::size_t pl = 0; pl < planes; ++pl) {
                            const T* g = self.grad.data() + pl * 4 * h * w;
                            T* dst = ga->data() + pl * h * w;
                            for (std::size_t y = 0; y < h; ++y) {
                              const T* g0 = g + 2 * y * ow;
                              const T* g1 = g0 + ow;
                              for (std::size_t x = 0; x < w; ++x) {
                                dst[y * w + x] += (g0[2 * x] + g0[2 * x + 1]) +
                                                  (g1[2 * x] + g1[2 * x + 1]);
                              }
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> maxpool2x(const BasicTensor<T>& a) {
  if (a.rank() != 4) throw ShapeError("maxpool2x expects NCHW, got " + shape_str(a.shape()));
  const std::size_t h = a.dim(2), w = a.dim(3);
  if (h % 2 || w % 2) throw ShapeError("maxpool2x needs even spatial dims, got " + shape_str(a.shape()));
  const std::size_t planes = a.dim(0) * a.dim(1);
  const std::size_t oh = h / 2, ow = w / 2;
  const auto& av = a.node()->value;
  std::vector<T> out(planes * oh * ow);
  std::vector<std::uint32_t> argmax(out.size());
  for (std::size_t pl = 0; pl < planes; ++pl) {
    const T* src = av.data() + pl * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) {
        const std::size_t base = (2 * y) * w + 2 * x;
        const std::size_t cand[4] = {base, base + 1, base + w, base + w + 1};
        std::size_t best = cand[0];
        for (int c = 1; c < 4; ++c) {
          if (src[cand[c]] > src[best]) best = cand[c];
        }
        const std::size_t o = pl * oh * ow + y * ow + x;
        out[o] = src[best];
        argmax[o] = static_cast<std::uint32_t>(pl * h * w + best);
      }
    }
  }
  Shape shape{a.dim(0), a.dim(1), oh, ow};
  return make_result<T>(std::move(shape), std::move(out), "maxpool2x", {&a},
                        [argmax = std::move(argmax)](Node<T>& self) {
                          std::vector<T>* ga = parent_grad(self, 0);
                          if (!ga) return;
                          for (std::size_t o = 0; o < argmax.size(); ++o) {
                            (*ga)[argmax[o]] += self.grad[o];
                          }
                        });
}

#define PMT_INSTANTIATE_OPS(T)                                                             \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> sub<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> div<T>(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> add<T>(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> mul<T>(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> rsub<T>(T, const BasicTensor<T>&);                               \
  template BasicTensor<T> pow<T>(const BasicTensor<T>&, T);                                \
  template BasicTensor<T> exp<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> log<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> neg<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> clamp<T>(const BasicTensor<T>&, T, T);                           \
  template BasicTensor<T> sum<T>(const BasicTensor<T>&);                                   \
  template BasicTensor<T> mean<T>(const BasicTensor<T>&);                                  \
  template BasicTensor<T> sum_rows<T>(const BasicTensor<T>&);                              \
  template BasicTensor<T> concat<T>(const std::vector<BasicTensor<T>>&, std::size_t);      \
  template BasicTensor<T> slice<T>(const BasicTensor<T>&, std::size_t, std::size_t,        \
                                   std::size_t);                                           \
  template BasicTensor<T> reshape<T>(const BasicTensor<T>&, Shape);                        \
  template BasicTensor<T> threshold<T>(const BasicTensor<T>&, T);                          \
  template BasicTensor<T> relu<T>(const BasicTensor<T>&);                                  \
  template BasicTensor<T> sigmoid<T>(const BasicTensor<T>&);                               \
  template BasicTensor<T> upsample2x<T>(const BasicTensor<T>&);                            \
  template BasicTensor<T> maxpool2x<T>(const BasicTensor<T>&);

PMT_INSTANTIATE_OPS(float)
PMT_INSTANTIATE_OPS(double)

}  // namespace pmt
