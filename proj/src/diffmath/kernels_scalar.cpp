#include "alm/diffmath/kernels.hpp"

namespace alm::kernels {
namespace {

double dot_scalar(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void gemm_nn_scalar(const double* a, const double* b, double* c, std::size_t m,
                    std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* row = c + i * n;
    for (std::size_t j = 0; j < n; ++j) row[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      axpy_scalar(a[i * k + p], b + p * n, row, n);
    }
  }
}

void gemm_nt_acc_scalar(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      c[i * k + p] += dot_scalar(a + i * n, b + p * n, n);
    }
  }
}

void gemm_tn_acc_scalar(const double* a, const double* b, double* c,
                        std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      axpy_scalar(a[i * k + p], b + i * n, c + p * n, n);
    }
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable table{Backend::kScalar, dot_scalar, axpy_scalar,
                                 gemm_nn_scalar, gemm_nt_acc_scalar,
                                 gemm_tn_acc_scalar};
  return table;
}

}  // namespace alm::kernels
