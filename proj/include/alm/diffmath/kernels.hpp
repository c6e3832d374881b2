#pragma once

// Dense f64 inner loops used by the tensor ops. Each kernel has a scalar
// reference implementation and, on x86-64, an AVX2+FMA variant. The active
// table is chosen once at first use from the CPU feature bits; the
// environment variable ALM_SIMD=scalar forces the reference path.

#include <cstddef>
#include <string_view>

namespace alm::kernels {

enum class Backend { kScalar, kAvx2 };

struct KernelTable {
  Backend backend;
  // sum_i x[i] * y[i]
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  // C[m x n] = A[m x k] * B[k x n]            (overwrites C)
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n);
  // C[m x k] += A[m x n] * B[k x n]^T
  void (*gemm_nt_acc)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t n, std::size_t k);
  // C[k x n] += A[m x k]^T * B[m x n]
  void (*gemm_tn_acc)(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n);
};

const KernelTable& scalar_table();
// Returns nullptr when the binary was built without AVX2 support or the CPU
// lacks AVX2/FMA.
const KernelTable* avx2_table();

// Currently selected table.
const KernelTable& active();
// Overrides the selection; kAvx2 silently falls back to scalar if unsupported.
void select(Backend backend);
std::string_view backend_name(Backend backend);

}  // namespace alm::kernels
