// Compiled with -mavx2 -mfma. Nothing in this translation unit may run before
// kernels.cpp has confirmed CPU support.

#include "alm/diffmath/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)
#include <immintrin.h>

#include <vector>

namespace alm::kernels {
namespace {

constexpr std::size_t kLanes = 4;

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

double dot_avx2(const double* x, const double* y, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 2 * kLanes <= n; i += 2 * kLanes) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i + kLanes),
                           _mm256_loadu_pd(y + i + kLanes), acc1);
  }
  for (; i + kLanes <= n; i += kLanes) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(x + i), _mm256_loadu_pd(y + i), acc0);
  }
  double acc = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[m x n] += A[m x k] * B[k x n] with leading dimensions. 4x8 register tiles;
// edges fall back to axpy rows.
void gemm_acc_tiled(const double* a, std::size_t lda, const double* b, std::size_t ldb,
                    double* c, std::size_t ldc, std::size_t m, std::size_t k,
                    std::size_t n) {
  const std::size_t n8 = n - n % 8;
  std::size_t i = 0;
  for (; i + 4 <= m; i += 4) {
    const double* a0 = a + i * lda;
    const double* a1 = a0 + lda;
    const double* a2 = a1 + lda;
    const double* a3 = a2 + lda;
    double* c0 = c + i * ldc;
    double* c1 = c0 + ldc;
    double* c2 = c1 + ldc;
    double* c3 = c2 + ldc;
    for (std::size_t j = 0; j < n8; j += 8) {
      __m256d x00 = _mm256_loadu_pd(c0 + j), x01 = _mm256_loadu_pd(c0 + j + 4);
      __m256d x10 = _mm256_loadu_pd(c1 + j), x11 = _mm256_loadu_pd(c1 + j + 4);
      __m256d x20 = _mm256_loadu_pd(c2 + j), x21 = _mm256_loadu_pd(c2 + j + 4);
      __m256d x30 = _mm256_loadu_pd(c3 + j), x31 = _mm256_loadu_pd(c3 + j + 4);
      const double* bp = b + j;
      for (std::size_t p = 0; p < k; ++p, bp += ldb) {
        const __m256d b0 = _mm256_loadu_pd(bp);
        const __m256d b1 = _mm256_loadu_pd(bp + 4);
        __m256d av = _mm256_broadcast_sd(a0 + p);
        x00 = _mm256_fmadd_pd(av, b0, x00);
        x01 = _mm256_fmadd_pd(av, b1, x01);
        av = _mm256_broadcast_sd(a1 + p);
        x10 = _mm256_fmadd_pd(av, b0, x10);
        x11 = _mm256_fmadd_pd(av, b1, x11);
        av = _mm256_broadcast_sd(a2 + p);
        x20 = _mm256_fmadd_pd(av, b0, x20);
        x21 = _mm256_fmadd_pd(av, b1, x21);
        av = _mm256_broadcast_sd(a3 + p);
        x30 = _mm256_fmadd_pd(av, b0, x30);
        x31 = _mm256_fmadd_pd(av, b1, x31);
      }
      _mm256_storeu_pd(c0 + j, x00);
      _mm256_storeu_pd(c0 + j + 4, x01);
      _mm256_storeu_pd(c1 + j, x10);
      _mm256_storeu_pd(c1 + j + 4, x11);
      _mm256_storeu_pd(c2 + j, x20);
      _mm256_storeu_pd(c2 + j + 4, x21);
      _mm256_storeu_pd(c3 + j, x30);
      _mm256_storeu_pd(c3 + j + 4, x31);
    }
    if (n8 < n) {
      for (std::size_t r = 0; r < 4; ++r) {
        const double* ar = a + (i + r) * lda;
        double* cr = c + (i + r) * ldc;
        for (std::size_t p = 0; p < k; ++p) {
          const double* br = b + p * ldb;
          for (std::size_t j = n8; j < n; ++j) cr[j] += ar[p] * br[j];
        }
      }
    }
  }
  for (; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      axpy_avx2(a[i * lda + p], b + p * ldb, c + i * ldc, n);
    }
  }
}

void transpose(const double* src, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

thread_local std::vector<double> scratch;

double* scratch_buffer(std::size_t n) {
  if (scratch.size() < n) scratch.resize(n);
  return scratch.data();
}

void gemm_nn_avx2(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m * n; ++i) c[i] = 0.0;
  if (n == 1) {
    for (std::size_t i = 0; i < m; ++i) c[i] = dot_avx2(a + i * k, b, k);
    return;
  }
  gemm_acc_tiled(a, k, b, n, c, n, m, k, n);
}

void gemm_nt_acc_avx2(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k) {
  if (k < 8) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        c[i * k + p] += dot_avx2(a + i * n, b + p * n, n);
      }
    }
    return;
  }
  double* bt = scratch_buffer(n * k);
  transpose(b, k, n, bt);
  gemm_acc_tiled(a, n, bt, k, c, k, m, n, k);
}

void gemm_tn_acc_avx2(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n) {
  if (n < 8) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t p = 0; p < k; ++p) {
        axpy_avx2(a[i * k + p], b + i * n, c + p * n, n);
      }
    }
    return;
  }
  double* at = scratch_buffer(m * k);
  transpose(a, m, k, at);
  gemm_acc_tiled(at, m, b, n, c, n, k, m, n);
}

}  // namespace

const KernelTable* avx2_table_impl() {
  static const KernelTable table{Backend::kAvx2, dot_avx2, axpy_avx2,
                                 gemm_nn_avx2, gemm_nt_acc_avx2,
                                 gemm_tn_acc_avx2};
  return &table;
}

}  // namespace alm::kernels

#else

namespace alm::kernels {
const KernelTable* avx2_table_impl() { return nullptr; }
}  // namespace alm::kernels

#endif
