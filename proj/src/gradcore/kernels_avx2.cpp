// AVX2 + FMA variants of the float kernels. This translation unit is the only
// one compiled with -mavx2 -mfma; nothing here runs unless dispatch confirmed
// CPU support.

#include <immintrin.h>

#include <cmath>
#include <cstddef>

#include "pmt/gradcore/kernels.hpp"

namespace pmt::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 sh = _mm_movehdup_ps(lo);
  __m128 s = _mm_add_ps(lo, sh);
  sh = _mm_movehl_ps(sh, s);
  s = _mm_add_ss(s, sh);
  return _mm_cvtss_f32(s);
}

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d h = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, h));
}

void add(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void sub(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_sub_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] - b[i];
}

void mul(const float* a, const float* b, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i,
                     _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void scale(const float* a, float s, float* out, std::size_t n) {
  const __m256 vs = _mm256_set1_ps(s);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), vs));
  }
  for (; i < n; ++i) out[i] = a[i] * s;
}

void axpy(float alpha, const float* x, float* y, std::size_t n) {
  const __m256 va = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(va, _mm256_loadu_ps(x + i),
                                            _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

void mul_acc(const float* a, const float* b, float* y, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(_mm256_loadu_ps(a + i),
                                            _mm256_loadu_ps(b + i),
                                            _mm256_loadu_ps(y + i)));
  }
  for (; i < n; ++i) y[i] = std::fma(a[i], b[i], y[i]);
}

void relu(const float* x, float* out, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    // Mask-and keeps only strictly positive lanes, like the scalar `x > 0`.
    const __m256 v = _mm256_loadu_ps(x + i);
    const __m256 mask = _mm256_cmp_ps(v, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(out + i, _mm256_and_ps(mask, v));
  }
  for (; i < n; ++i) out[i] = x[i] > 0.0f ? x[i] : 0.0f;
}

void relu_backward(const float* x, const float* g, float* gin, std::size_t n) {
  const __m256 zero = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 mask = _mm256_cmp_ps(_mm256_loadu_ps(x + i), zero, _CMP_GT_OQ);
    const __m256 gv = _mm256_and_ps(mask, _mm256_loadu_ps(g + i));
    _mm256_storeu_ps(gin + i, _mm256_add_ps(_mm256_loadu_ps(gin + i), gv));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.0f) gin[i] += g[i];
  }
}

double sum(const float* x, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 v = _mm256_loadu_ps(x + i);
    acc0 = _mm256_add_pd(acc0, _mm256_cvtps_pd(_mm256_castps256_ps128(v)));
    acc1 = _mm256_add_pd(acc1, _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1)));
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(x[i]);
  return s;
}

double dot(const float* a, const float* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 va = _mm256_loadu_ps(a + i);
    const __m256 vb = _mm256_loadu_ps(b + i);
    acc0 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_castps256_ps128(va)),
                           _mm256_cvtps_pd(_mm256_castps256_ps128(vb)), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_cvtps_pd(_mm256_extractf128_ps(va, 1)),
                           _mm256_cvtps_pd(_mm256_extractf128_ps(vb, 1)), acc1);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

bool all_finite(const float* x, std::size_t n) {
  const __m256 abs_mask = _mm256_castsi256_ps(_mm256_set1_epi32(0x7fffffff));
  const __m256 inf = _mm256_set1_ps(INFINITY);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 a = _mm256_and_ps(_mm256_loadu_ps(x + i), abs_mask);
    // Ordered less-than is false for NaN and for +Inf.
    if (_mm256_movemask_ps(_mm256_cmp_ps(a, inf, _CMP_LT_OQ)) != 0xff) return false;
  }
  for (; i < n; ++i) {
    if (!std::isfinite(x[i])) return false;
  }
  return true;
}

// 4 rows x 16 columns register tile.
inline void gemm_rows_4x16(std::size_t k, const float* a, std::size_t lda,
                           const float* const* rows, std::size_t j, float* c,
                           std::size_t ldc) {
  float* c0 = c;
  float* c1 = c + ldc;
  float* c2 = c + 2 * ldc;
  float* c3 = c + 3 * ldc;
  __m256 r00 = _mm256_loadu_ps(c0 + j), r01 = _mm256_loadu_ps(c0 + j + 8);
  __m256 r10 = _mm256_loadu_ps(c1 + j), r11 = _mm256_loadu_ps(c1 + j + 8);
  __m256 r20 = _mm256_loadu_ps(c2 + j), r21 = _mm256_loadu_ps(c2 + j + 8);
  __m256 r30 = _mm256_loadu_ps(c3 + j), r31 = _mm256_loadu_ps(c3 + j + 8);
  const float* a0 = a;
  const float* a1 = a + lda;
  const float* a2 = a + 2 * lda;
  const float* a3 = a + 3 * lda;
  for (std::size_t p = 0; p < k; ++p) {
    const float* b = rows[p] + j;
    const __m256 b0 = _mm256_loadu_ps(b);
    const __m256 b1 = _mm256_loadu_ps(b + 8);
    __m256 av = _mm256_broadcast_ss(a0 + p);
    r00 = _mm256_fmadd_ps(av, b0, r00);
    r01 = _mm256_fmadd_ps(av, b1, r01);
    av = _mm256_broadcast_ss(a1 + p);
    r10 = _mm256_fmadd_ps(av, b0, r10);
    r11 = _mm256_fmadd_ps(av, b1, r11);
    av = _mm256_broadcast_ss(a2 + p);
    r20 = _mm256_fmadd_ps(av, b0, r20);
    r21 = _mm256_fmadd_ps(av, b1, r21);
    av = _mm256_broadcast_ss(a3 + p);
    r30 = _mm256_fmadd_ps(av, b0, r30);
    r31 = _mm256_fmadd_ps(av, b1, r31);
  }
  _mm256_storeu_ps(c0 + j, r00);
  _mm256_storeu_ps(c0 + j + 8, r01);
  _mm256_storeu_ps(c1 + j, r10);
  _mm256_storeu_ps(c1 + j + 8, r11);
  _mm256_storeu_ps(c2 + j, r20);
  _mm256_storeu_ps(c2 + j + 8, r21);
  _mm256_storeu_ps(c3 + j, r30);
  _mm256_storeu_ps(c3 + j + 8, r31);
}

inline void gemm_rows_1x16(std::size_t k, const float* a,
                           const float* const* rows, std::size_t j, float* c) {
  __m256 r0 = _mm256_loadu_ps(c + j), r1 = _mm256_loadu_ps(c + j + 8);
  for (std::size_t p = 0; p < k; ++p) {
    const float* b = rows[p] + j;
    const __m256 av = _mm256_broadcast_ss(a + p);
    r0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b), r0);
    r1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(b + 8), r1);
  }
  _mm256_storeu_ps(c + j, r0);
  _mm256_storeu_ps(c + j + 8, r1);
}

inline void gemm_rows_1x8(std::size_t k, const float* a,
                          const float* const* rows, std::size_t j, float* c) {
  __m256 r0 = _mm256_loadu_ps(c + j);
  for (std::size_t p = 0; p < k; ++p) {
    r0 = _mm256_fmadd_ps(_mm256_broadcast_ss(a + p),
                         _mm256_loadu_ps(rows[p] + j), r0);
  }
  _mm256_storeu_ps(c + j, r0);
}

inline void gemm_rows_1x1(std::size_t k, const float* a,
                          const float* const* rows, std::size_t j, float* c) {
  float r = c[j];
  for (std::size_t p = 0; p < k; ++p) r = std::fma(a[p], rows[p][j], r);
  c[j] = r;
}

void gemm_rows(std::size_t m, std::size_t n, std::size_t k, const float* a,
               std::size_t lda, const float* const* rows, float* c,
               std::size_t ldc) {
  std::size_t j = 0;
  for (; j + 16 <= n; j += 16) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      gemm_rows_4x16(k, a + i * lda, lda, rows, j, c + i * ldc, ldc);
    }
    for (; i < m; ++i) gemm_rows_1x16(k, a + i * lda, rows, j, c + i * ldc);
  }
  for (; j + 8 <= n; j += 8) {
    for (std::size_t i = 0; i < m; ++i) {
      gemm_rows_1x8(k, a + i * lda, rows, j, c + i * ldc);
    }
  }
  for (; j < n; ++j) {
    for (std::size_t i = 0; i < m; ++i) {
      gemm_rows_1x1(k, a + i * lda, rows, j, c + i * ldc);
    }
  }
}

// 4 output rows x 3 window rows; vector accumulation along the reduction.
inline void corr_rows_4x3(std::size_t k, std::size_t nr, std::size_t n,
                          const float* a, std::size_t lda, std::size_t ldr,
                          const float* const* rows, std::size_t p, float* c) {
  __m256 acc[4][3];
  for (auto& row : acc) row[0] = row[1] = row[2] = _mm256_setzero_ps();
  float tail[4][3] = {};
  for (std::size_t r = 0; r < nr; ++r) {
    const float* b0 = rows[r * k + p];
    const float* b1 = rows[r * k + p + 1];
    const float* b2 = rows[r * k + p + 2];
    const float* ar = a + r * ldr;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      const __m256 vb0 = _mm256_loadu_ps(b0 + j);
      const __m256 vb1 = _mm256_loadu_ps(b1 + j);
      const __m256 vb2 = _mm256_loadu_ps(b2 + j);
      for (int i = 0; i < 4; ++i) {
        const __m256 va = _mm256_loadu_ps(ar + i * lda + j);
        acc[i][0] = _mm256_fmadd_ps(va, vb0, acc[i][0]);
        acc[i][1] = _mm256_fmadd_ps(va, vb1, acc[i][1]);
        acc[i][2] = _mm256_fmadd_ps(va, vb2, acc[i][2]);
      }
    }
    for (; j < n; ++j) {
      for (int i = 0; i < 4; ++i) {
        const float av = ar[i * lda + j];
        tail[i][0] = std::fma(av, b0[j], tail[i][0]);
        tail[i][1] = std::fma(av, b1[j], tail[i][1]);
        tail[i][2] = std::fma(av, b2[j], tail[i][2]);
      }
    }
  }
  for (int i = 0; i < 4; ++i) {
    for (int q = 0; q < 3; ++q) c[i * k + p + q] += hsum(acc[i][q]) + tail[i][q];
  }
}

inline void corr_rows_1x1(std::size_t k, std::size_t nr, std::size_t n,
                          const float* a, std::size_t ldr,
                          const float* const* rows, std::size_t p, float* c) {
  __m256 acc = _mm256_setzero_ps();
  float tail = 0.0f;
  for (std::size_t r = 0; r < nr; ++r) {
    const float* b = rows[r * k + p];
    const float* ar = a + r * ldr;
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      acc = _mm256_fmadd_ps(_mm256_loadu_ps(ar + j), _mm256_loadu_ps(b + j), acc);
    }
    for (; j < n; ++j) tail = std::fma(ar[j], b[j], tail);
  }
  c[p] += hsum(acc) + tail;
}

void corr_rows(std::size_t m, std::size_t k, std::size_t nr, std::size_t n,
               const float* a, std::size_t lda, std::size_t ldr,
               const float* const* rows, float* c) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t p = 0;
    for (; p + 3 <= k; p += 3) {
      corr_rows_4x3(k, nr, n, a + i * lda, lda, ldr, rows, p, c + i * k);
    }
    for (; p < k; ++p) {
      for (std::size_t ii = i; ii < i + 4; ++ii) {
        corr_rows_1x1(k, nr, n, a + ii * lda, ldr, rows, p, c + ii * k);
      }
    }
  }
  for (; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      corr_rows_1x1(k, nr, n, a + i * lda, ldr, rows, p, c + i * k);
    }
  }
}

void sgd_update(float* theta, float* velocity, const float* grad, std::size_t n,
                float lr, float momentum, float weight_decay) {
  const __m256 vlr = _mm256_set1_ps(lr);
  const __m256 vm = _mm256_set1_ps(momentum);
  const __m256 vwd = _mm256_set1_ps(weight_decay);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 th = _mm256_loadu_ps(theta + i);
    const __m256 g = _mm256_fmadd_ps(vwd, th, _mm256_loadu_ps(grad + i));
    const __m256 v = _mm256_fmadd_ps(vm, _mm256_loadu_ps(velocity + i), g);
    _mm256_storeu_ps(velocity + i, v);
    _mm256_storeu_ps(theta + i, _mm256_fnmadd_ps(vlr, v, th));
  }
  for (; i < n; ++i) {
    const float g = std::fma(weight_decay, theta[i], grad[i]);
    velocity[i] = std::fma(momentum, velocity[i], g);
    theta[i] = std::fma(-lr, velocity[i], theta[i]);
  }
}

void ema_update(float* teacher, const float* student, std::size_t n,
                float alpha) {
  const __m256 va = _mm256_set1_ps(alpha);
  const __m256 vb = _mm256_set1_ps(1.0f - alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 s = _mm256_mul_ps(vb, _mm256_loadu_ps(student + i));
    _mm256_storeu_ps(teacher + i,
                     _mm256_fmadd_ps(va, _mm256_loadu_ps(teacher + i), s));
  }
  for (; i < n; ++i) {
    teacher[i] = std::fma(alpha, teacher[i], (1.0f - alpha) * student[i]);
  }
}

constexpr KernelTable<float> kAvx2Float{
    Backend::kAvx2, &add,      &sub,       &mul,
    &scale,         &axpy,     &mul_acc,   &relu,
    &relu_backward, &sum,      &dot,       &all_finite,
    &gemm_rows,     &corr_rows, &sgd_update, &ema_update,
};

}  // namespace

namespace detail {
const KernelTable<float>* avx2_table_impl() { return &kAvx2Float; }
}  // namespace detail

}  // namespace pmt::kernels
