// AVX2/FMA variants. This translation unit is the only one compiled with
// -mavx2 -mfma; it is entered only after a CPUID check.

#include <immintrin.h>

#include "atfs/simd/kernels.hpp"

namespace atfs::simd {
namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d sh = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  }
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// 4x8 register tile for C += op(A) * B where op(A)(r, p) = a[r*ars + p*aps].
// Covers both A (ars = lda, aps = 1) and A^T (ars = 1, aps = lda).
inline void tile_4x8(std::size_t k, const double* a, std::size_t ars,
                     std::size_t aps, const double* b, std::size_t ldb,
                     double* c, std::size_t ldc) {
  __m256d c00 = _mm256_loadu_pd(c + 0 * ldc), c01 = _mm256_loadu_pd(c + 0 * ldc + 4);
  __m256d c10 = _mm256_loadu_pd(c + 1 * ldc), c11 = _mm256_loadu_pd(c + 1 * ldc + 4);
  __m256d c20 = _mm256_loadu_pd(c + 2 * ldc), c21 = _mm256_loadu_pd(c + 2 * ldc + 4);
  __m256d c30 = _mm256_loadu_pd(c + 3 * ldc), c31 = _mm256_loadu_pd(c + 3 * ldc + 4);
  for (std::size_t p = 0; p < k; ++p) {
    const double* brow = b + p * ldb;
    const __m256d b0 = _mm256_loadu_pd(brow);
    const __m256d b1 = _mm256_loadu_pd(brow + 4);
    const double* ap = a + p * aps;
    __m256d av = _mm256_broadcast_sd(ap);
    c00 = _mm256_fmadd_pd(av, b0, c00);
    c01 = _mm256_fmadd_pd(av, b1, c01);
    av = _mm256_broadcast_sd(ap + ars);
    c10 = _mm256_fmadd_pd(av, b0, c10);
    c11 = _mm256_fmadd_pd(av, b1, c11);
    av = _mm256_broadcast_sd(ap + 2 * ars);
    c20 = _mm256_fmadd_pd(av, b0, c20);
    c21 = _mm256_fmadd_pd(av, b1, c21);
    av = _mm256_broadcast_sd(ap + 3 * ars);
    c30 = _mm256_fmadd_pd(av, b0, c30);
    c31 = _mm256_fmadd_pd(av, b1, c31);
  }
  _mm256_storeu_pd(c + 0 * ldc, c00); _mm256_storeu_pd(c + 0 * ldc + 4, c01);
  _mm256_storeu_pd(c + 1 * ldc, c10); _mm256_storeu_pd(c + 1 * ldc + 4, c11);
  _mm256_storeu_pd(c + 2 * ldc, c20); _mm256_storeu_pd(c + 2 * ldc + 4, c21);
  _mm256_storeu_pd(c + 3 * ldc, c30); _mm256_storeu_pd(c + 3 * ldc + 4, c31);
}

// One row of C, four columns at a time.
inline void row_x4(std::size_t k, const double* a, std::size_t aps,
                   const double* b, std::size_t ldb, double* c) {
  __m256d acc = _mm256_loadu_pd(c);
  for (std::size_t p = 0; p < k; ++p) {
    acc = _mm256_fmadd_pd(_mm256_broadcast_sd(a + p * aps),
                          _mm256_loadu_pd(b + p * ldb), acc);
  }
  _mm256_storeu_pd(c, acc);
}

inline void row_x1(std::size_t k, const double* a, std::size_t aps,
                   const double* b, std::size_t ldb, double* c) {
  double acc = *c;
  for (std::size_t p = 0; p < k; ++p) acc += a[p * aps] * b[p * ldb];
  *c = acc;
}

void gemm_generic(std::size_t m, std::size_t n, std::size_t k, const double* a,
                  std::size_t ars, std::size_t aps, const double* b,
                  std::size_t ldb, double* c, std::size_t ldc) {
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    std::size_t j = 0;
    for (; j + 8 <= n; j += 8) {
      tile_4x8(k, a + i * ars, ars, aps, b + j, ldb, c + i * ldc + j, ldc);
    }
    for (std::size_t r = 0; r < 4; ++r) {
      std::size_t jj = j;
      for (; jj + 4 <= n; jj += 4) {
        row_x4(k, a + (i + r) * ars, aps, b + jj, ldb, c + (i + r) * ldc + jj);
      }
      for (; jj < n; ++jj) {
        row_x1(k, a + (i + r) * ars, aps, b + jj, ldb, c + (i + r) * ldc + jj);
      }
    }
  }
  for (; i < m; ++i) {
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      row_x4(k, a + i * ars, aps, b + j, ldb, c + i * ldc + j);
    }
    for (; j < n; ++j) row_x1(k, a + i * ars, aps, b + j, ldb, c + i * ldc + j);
  }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  gemm_generic(m, n, k, a, lda, 1, b, ldb, c, ldc);
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  gemm_generic(m, n, k, a, 1, lda, b, ldb, c, ldc);
}

// C += A * B^T: both operands are walked along contiguous rows, so this is a
// 2x4 block of dot products.
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
             std::size_t lda, const double* b, std::size_t ldb, double* c,
             std::size_t ldc) {
  const std::size_t k4 = k & ~std::size_t{3};
  std::size_t i = 0;
  for (; i + 2 <= m; i += 2) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
      const double* b0 = b + j * ldb;
      const double* b1 = b0 + ldb;
      const double* b2 = b1 + ldb;
      const double* b3 = b2 + ldb;
      __m256d s00 = _mm256_setzero_pd(), s01 = _mm256_setzero_pd();
      __m256d s02 = _mm256_setzero_pd(), s03 = _mm256_setzero_pd();
      __m256d s10 = _mm256_setzero_pd(), s11 = _mm256_setzero_pd();
      __m256d s12 = _mm256_setzero_pd(), s13 = _mm256_setzero_pd();
      for (std::size_t p = 0; p < k4; p += 4) {
        const __m256d va0 = _mm256_loadu_pd(a0 + p);
        const __m256d va1 = _mm256_loadu_pd(a1 + p);
        __m256d vb = _mm256_loadu_pd(b0 + p);
        s00 = _mm256_fmadd_pd(va0, vb, s00);
        s10 = _mm256_fmadd_pd(va1, vb, s10);
        vb = _mm256_loadu_pd(b1 + p);
        s01 = _mm256_fmadd_pd(va0, vb, s01);
        s11 = _mm256_fmadd_pd(va1, vb, s11);
        vb = _mm256_loadu_pd(b2 + p);
        s02 = _mm256_fmadd_pd(va0, vb, s02);
        s12 = _mm256_fmadd_pd(va1, vb, s12);
        vb = _mm256_loadu_pd(b3 + p);
        s03 = _mm256_fmadd_pd(va0, vb, s03);
        s13 = _mm256_fmadd_pd(va1, vb, s13);
      }
      double r[2][4] = {{hsum(s00), hsum(s01), hsum(s02), hsum(s03)},
                        {hsum(s10), hsum(s11), hsum(s12), hsum(s13)}};
      for (std::size_t p = k4; p < k; ++p) {
        r[0][0] += a0[p] * b0[p]; r[0][1] += a0[p] * b1[p];
        r[0][2] += a0[p] * b2[p]; r[0][3] += a0[p] * b3[p];
        r[1][0] += a1[p] * b0[p]; r[1][1] += a1[p] * b1[p];
        r[1][2] += a1[p] * b2[p]; r[1][3] += a1[p] * b3[p];
      }
      for (std::size_t q = 0; q < 4; ++q) {
        c[i * ldc + j + q] += r[0][q];
        c[(i + 1) * ldc + j + q] += r[1][q];
      }
    }
    for (; j < n; ++j) {
      c[i * ldc + j] += dot(a0, b + j * ldb, k);
      c[(i + 1) * ldc + j] += dot(a1, b + j * ldb, k);
    }
  }
  for (; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      c[i * ldc + j] += dot(a + i * lda, b + j * ldb, k);
    }
  }
}

void relu_forward(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    _mm256_storeu_pd(y + i, _mm256_and_pd(v, _mm256_cmp_pd(v, zero, _CMP_GT_OQ)));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* dy, double* dx,
                   std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(x + i), zero, _CMP_GT_OQ);
    _mm256_storeu_pd(dx + i, _mm256_and_pd(_mm256_loadu_pd(dy + i), mask));
  }
  for (; i < n; ++i) dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
}

// Matches the scalar kernel bit-for-bit: separate multiply and add, and
// comparisons ordered exactly like the scalar ternaries.
inline __m256d clamp_below(__m256d v, __m256d lo) {
  return _mm256_blendv_pd(v, lo, _mm256_cmp_pd(v, lo, _CMP_LT_OQ));
}
inline __m256d clamp_above(__m256d v, __m256d hi) {
  return _mm256_blendv_pd(v, hi, _mm256_cmp_pd(v, hi, _CMP_GT_OQ));
}

void sign_step_project(double* x_adv, const double* grad, const double* x0,
                       double step, double eps, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  const __m256d one = _mm256_set1_pd(1.0);
  const __m256d vstep = _mm256_set1_pd(step);
  const __m256d veps = _mm256_set1_pd(eps);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d g = _mm256_loadu_pd(grad + i);
    const __m256d pos = _mm256_and_pd(_mm256_cmp_pd(g, zero, _CMP_GT_OQ), one);
    const __m256d neg = _mm256_and_pd(_mm256_cmp_pd(g, zero, _CMP_LT_OQ), one);
    const __m256d s = _mm256_sub_pd(pos, neg);
    __m256d v = _mm256_add_pd(_mm256_loadu_pd(x_adv + i), _mm256_mul_pd(vstep, s));
    const __m256d base = _mm256_loadu_pd(x0 + i);
    v = clamp_below(v, _mm256_sub_pd(base, veps));
    v = clamp_above(v, _mm256_add_pd(base, veps));
    v = clamp_below(v, zero);
    v = clamp_above(v, one);
    _mm256_storeu_pd(x_adv + i, v);
  }
  for (; i < n; ++i) {
    const double s = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    double v = x_adv[i] + step * s;
    const double lo = x0[i] - eps;
    const double hi = x0[i] + eps;
    v = v < lo ? lo : v;
    v = v > hi ? hi : v;
    v = v < 0.0 ? 0.0 : v;
    v = v > 1.0 ? 1.0 : v;
    x_adv[i] = v;
  }
}

void sgd_momentum(double* w, const double* g, double* v, double lr,
                  double momentum, double weight_decay, std::size_t n) {
  const __m256d vlr = _mm256_set1_pd(lr);
  const __m256d vmom = _mm256_set1_pd(momentum);
  const __m256d vwd = _mm256_set1_pd(weight_decay);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d wi = _mm256_loadu_pd(w + i);
    const __m256d d = _mm256_add_pd(_mm256_loadu_pd(g + i), _mm256_mul_pd(vwd, wi));
    const __m256d vi = _mm256_add_pd(_mm256_mul_pd(vmom, _mm256_loadu_pd(v + i)), d);
    _mm256_storeu_pd(v + i, vi);
    _mm256_storeu_pd(w + i, _mm256_sub_pd(wi, _mm256_mul_pd(vlr, vi)));
  }
  for (; i < n; ++i) {
    const double d = g[i] + weight_decay * w[i];
    v[i] = momentum * v[i] + d;
    w[i] = w[i] - lr * v[i];
  }
}

}  // namespace

const KernelTable* avx2_kernels() {
  static const KernelTable table{
      Backend::kAvx2, "avx2",       &dot,
      &axpy,          &gemm_nn,     &gemm_nt,
      &gemm_tn,       &relu_forward, &relu_backward,
      &sign_step_project, &sgd_momentum,
  };
  return &table;
}

}  // namespace atfs::simd
