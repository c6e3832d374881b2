// Equivalence of the SIMD kernels against the scalar reference.

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "alm/diffmath/kernels.hpp"
#include "alm/diffmath/ops.hpp"
#include "finite_diff.hpp"

namespace alm::kernels {
namespace {

using alm::testing::random_vector;

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

class SimdEquivalence : public ::testing::Test {
 protected:
  void SetUp() override {
    simd_ = avx2_table();
    if (simd_ == nullptr) GTEST_SKIP() << "no AVX2 variant on this machine";
  }
  const KernelTable* simd_ = nullptr;
  const KernelTable& ref_ = scalar_table();
};

// Sizes straddle the 4- and 8-lane boundaries and the 4-row blocking.
constexpr std::size_t kSizes[] = {1, 3, 4, 5, 7, 8, 9, 16, 17, 31, 64, 129};

TEST_F(SimdEquivalence, DotAndAxpy) {
  std::mt19937_64 rng(1);
  for (std::size_t n : kSizes) {
    const auto x = random_vector(n, rng);
    const auto y = random_vector(n, rng);
    EXPECT_NEAR(simd_->dot(x.data(), y.data(), n), ref_.dot(x.data(), y.data(), n),
                1e-13 * static_cast<double>(n));
    auto ya = y, yb = y;
    simd_->axpy(0.37, x.data(), ya.data(), n);
    ref_.axpy(0.37, x.data(), yb.data(), n);
    EXPECT_LE(max_abs_diff(ya, yb), 1e-15);
  }
}

TEST_F(SimdEquivalence, GemmVariants) {
  std::mt19937_64 rng(2);
  for (std::size_t m : {1, 3, 4, 6, 9}) {
    for (std::size_t k : kSizes) {
      for (std::size_t n : {1, 2, 5, 8, 13}) {
        const auto a = random_vector(m * k, rng);
        const auto b = random_vector(k * n, rng);
        std::vector<double> c1(m * n, 7.0), c2(m * n, -7.0);
        simd_->gemm_nn(a.data(), b.data(), c1.data(), m, k, n);
        ref_.gemm_nn(a.data(), b.data(), c2.data(), m, k, n);
        EXPECT_LE(max_abs_diff(c1, c2), 1e-12) << m << "x" << k << "x" << n;

        // C[m x k] += A[m x n] B[k x n]^T
        const auto g = random_vector(m * n, rng);
        std::vector<double> d1(m * k, 0.5), d2(m * k, 0.5);
        simd_->gemm_nt_acc(g.data(), b.data(), d1.data(), m, n, k);
        ref_.gemm_nt_acc(g.data(), b.data(), d2.data(), m, n, k);
        EXPECT_LE(max_abs_diff(d1, d2), 1e-12);

        // C[k x n] += A[m x k]^T B[m x n]
        std::vector<double> e1(k * n, 0.0), e2(k * n, 0.0);
        simd_->gemm_tn_acc(a.data(), g.data(), e1.data(), m, k, n);
        ref_.gemm_tn_acc(a.data(), g.data(), e2.data(), m, k, n);
        EXPECT_LE(max_abs_diff(e1, e2), 1e-12);
      }
    }
  }
}

TEST_F(SimdEquivalence, TensorOpsAgreeAcrossBackends) {
  std::mt19937_64 rng(3);
  const auto xv = random_vector(6 * 33, rng);
  const auto wv = random_vector(33 * 10, rng);
  const auto bv = random_vector(10, rng);
  auto run = [&](Backend backend) {
    select(backend);
    Tape tape;
    const Tensor x = tape.leaf(Tensor::matrix(6, 33, xv));
    const Tensor w = tape.leaf(Tensor::matrix(33, 10, wv));
    const Tensor b = tape.leaf(Tensor::vector(bv));
    const Tensor loss = sum(square(elu(affine(x, w, b))));
    const Gradients g = tape.backward(loss);
    auto out = g.wrt(w);
    out.push_back(loss.item());
    const auto gx = g.wrt(x);
    out.insert(out.end(), gx.begin(), gx.end());
    return out;
  };
  const auto simd = run(Backend::kAvx2);
  const auto ref = run(Backend::kScalar);
  select(Backend::kAvx2);
  EXPECT_LE(max_abs_diff(simd, ref), 1e-11);
}

TEST(KernelSelection, ScalarAlwaysAvailable) {
  select(Backend::kScalar);
  EXPECT_EQ(active().backend, Backend::kScalar);
  select(Backend::kAvx2);
  EXPECT_EQ(active().backend, avx2_table() ? Backend::kAvx2 : Backend::kScalar);
  EXPECT_EQ(backend_name(Backend::kScalar), "scalar");
}

}  // namespace
}  // namespace alm::kernels
