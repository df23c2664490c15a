#include <cmath>
#include <cstddef>

#include "pmt/gradcore/kernels.hpp"

namespace pmt::kernels {
namespace {

template <typename T>
void add(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <typename T>
void sub(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <typename T>
void mul(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <typename T>
void scale(const T* a, T s, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * s;
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
void mul_acc(const T* a, const T* b, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a[i] * b[i];
}

template <typename T>
void relu(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <typename T>
void relu_backward(const T* x, const T* g, T* gin, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) gin[i] += g[i];
  }
}

template <typename T>
double sum(const T* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

template <typename T>
double dot(const T* a, const T* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  }
  return s;
}

template <typename T>
bool all_finite(const T* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

template <typename T>
void gemm_rows(std::size_t m, std::size_t n, std::size_t k, const T* a,
               std::size_t lda, const T* const* rows, T* c, std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * ldc;
    const T* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      const T* brow = rows[p];
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
void corr_rows(std::size_t m, std::size_t k, std::size_t nr, std::size_t n,
               const T* a, std::size_t lda, std::size_t ldr,
               const T* const* rows, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      T acc = T(0);
      for (std::size_t r = 0; r < nr; ++r) {
        const T* arow = a + i * lda + r * ldr;
        const T* brow = rows[r * k + p];
        for (std::size_t j = 0; j < n; ++j) acc += arow[j] * brow[j];
      }
      c[i * k + p] += acc;
    }
  }
}

template <typename T>
void sgd_update(T* theta, T* velocity, const T* grad, std::size_t n, T lr,
                T momentum, T weight_decay) {
  for (std::size_t i = 0; i < n; ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * theta[i];
    theta[i] -= lr * velocity[i];
  }
}

template <typename T>
void ema_update(T* teacher, const T* student, std::size_t n, T alpha) {
  const T beta = T(1) - alpha;
  for (std::size_t i = 0; i < n; ++i) {
    teacher[i] = alpha * teacher[i] + beta * student[i];
  }
}

template <typename T>
constexpr KernelTable<T> make_table() {
  return KernelTable<T>{
      Backend::kScalar, &add<T>,       &sub<T>,        &mul<T>,
      &scale<T>,        &axpy<T>,      &mul_acc<T>,    &relu<T>,
      &relu_backward<T>, &sum<T>,      &dot<T>,        &all_finite<T>,
      &gemm_rows<T>,    &corr_rows<T>, &sgd_update<T>, &ema_update<T>,
  };
}

constexpr KernelTable<float> kScalarFloat = make_table<float>();
constexpr KernelTable<double> kScalarDouble = make_table<double>();

}  // namespace

template <>
const KernelTable<float>& scalar_table<float>() {
  return kScalarFloat;
}

template <>
const KernelTable<double>& scalar_table<double>() {
  return kScalarDouble;
}

}  // namespace pmt::kernels
