#pragma once

// Data-parallel inner loops used by the tensor ops.
//
// Every kernel has a portable scalar reference implementation. On x86-64 an
// AVX2+FMA variant of the float table is compiled in a separate translation
// unit and selected at runtime when the CPU supports it. The two variants are
// equivalence-tested against each other (tests/unit/test_kernels.cpp); they
// agree to rounding, not bitwise, because the vector code uses fused
// multiply-add and lane-wise partial sums. Within one backend every kernel has
// a fixed reduction order, so results are bitwise reproducible run to run.
//
// The double table always uses the scalar reference; double precision is only
// used by finite-difference checks.

#include <cstddef>
#include <string_view>

namespace pmt::kernels {

enum class Backend { kScalar, kAvx2 };

std::string_view backend_name(Backend b);

template <typename T>
struct KernelTable {
  Backend backend;

  // out[i] = a[i] op b[i]
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  // out[i] = a[i] * s
  void (*scale)(const T* a, T s, T* out, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // y[i] += a[i] * b[i]
  void (*mul_acc)(const T* a, const T* b, T* y, std::size_t n);
  // out[i] = max(x[i], 0)
  void (*relu)(const T* x, T* out, std::size_t n);
  // gin[i] += x[i] > 0 ? g[i] : 0
  void (*relu_backward)(const T* x, const T* g, T* gin, std::size_t n);
  // Sums accumulate in double.
  double (*sum)(const T* x, std::size_t n);
  double (*dot)(const T* a, const T* b, std::size_t n);
  bool (*all_finite)(const T* x, std::size_t n);

  // Row-pointer GEMM: c[i*ldc + j] += sum_p a[i*lda + p] * rows[p][j]
  // for i < m, j < n, p < k. Each rows[p] points at n contiguous values, so
  // convolution windows can be addressed without materializing im2col.
  void (*gemm_rows)(std::size_t m, std::size_t n, std::size_t k, const T* a,
                    std::size_t lda, const T* const* rows, T* c,
                    std::size_t ldc);

  // Row-pointer correlation used for weight gradients:
  // c[i*k + p] += sum_{r < nr} sum_{j < n} a[i*lda + r*ldr + j] * rows[r*k + p][j]
  // for i < m, p < k.
  void (*corr_rows)(std::size_t m, std::size_t k, std::size_t nr,
                    std::size_t n, const T* a, std::size_t lda,
                    std::size_t ldr, const T* const* rows, T* c);

  // Classic momentum SGD with L2 weight decay folded into the gradient:
  //   v = momentum * v + g + wd * theta;  theta -= lr * v
  void (*sgd_update)(T* theta, T* velocity, const T* grad, std::size_t n,
                     T lr, T momentum, T weight_decay);
  // teacher = alpha * teacher + (1 - alpha) * student
  void (*ema_update)(T* teacher, const T* student, std::size_t n, T alpha);
};

template <typename T>
const KernelTable<T>& scalar_table();

// nullptr when the AVX2 variant was not compiled in or the CPU lacks AVX2/FMA.
const KernelTable<float>* avx2_table();

bool avx2_available();

// Kernel table used by the tensor ops. The float table follows the selected
// backend; the double table is always scalar.
template <typename T>
const KernelTable<T>& active();

// Selects the float backend. The initial choice is AVX2 when available,
// unless the environment variable PMT_SIMD=scalar is set. Requesting kAvx2 on
// a machine without it is an error.
void set_backend(Backend b);
Backend current_backend();

// RAII backend override for tests and benchmarks.
class ScopedBackend {
 public:
  explicit ScopedBackend(Backend b) : previous_(current_backend()) {
    set_backend(b);
  }
  ~ScopedBackend() { set_backend(previous_); }
  ScopedBackend(const ScopedBackend&) = delete;
  ScopedBackend& operator=(const ScopedBackend&) = delete;

 private:
  Backend previous_;
};

}  // namespace pmt::kernels
