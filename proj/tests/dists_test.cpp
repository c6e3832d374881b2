#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "alm/dists.hpp"
#include "alm/error.hpp"
#include "finite_diff.hpp"

namespace alm {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_vector;

DiagGaussian gauss(std::vector<double> mean, std::vector<double> std) {
  return {Tensor::vector(std::move(mean)), Tensor::vector(std::move(std))};
}

TEST(GaussianRsample, NoiseCases) {
  const auto g = gauss({0.5, -1.0}, {2.0, 3.0});
  const Tensor at_zero = gaussian_rsample(g, Tensor::zeros({2}));
  EXPECT_DOUBLE_EQ(at_zero[0], 0.5);
  EXPECT_DOUBLE_EQ(at_zero[1], -1.0);
  const auto standard = gauss({0.0}, {1.0});
  EXPECT_DOUBLE_EQ(gaussian_rsample(standard, Tensor::vector({0.37})).item(), 0.37);
}

TEST(GaussianRsample, JacobianWrtMeanIsIdentity) {
  const std::vector<double> mean = {0.2, -0.4, 1.1};
  const Tensor std = Tensor::vector({0.5, 1.5, 0.7});
  const Tensor noise = Tensor::vector({0.3, -1.2, 0.8});
  for (std::size_t out = 0; out < 3; ++out) {
    auto f = [&](const std::vector<double>& m) {
      return gaussian_rsample({Tensor::vector(m), std}, noise)[out];
    };
    const auto fd = numeric_gradient(f, mean);
    Tape tape;
    const Tensor m = tape.leaf(Tensor::vector(mean));
    const Tensor sample = gaussian_rsample({m, std}, noise);
    const auto analytic = tape.backward(slice_cols(reshape(sample, {1, 3}), out, out + 1)).wrt(m);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_NEAR(fd[j], out == j ? 1.0 : 0.0, 1e-9);
      EXPECT_DOUBLE_EQ(analytic[j], out == j ? 1.0 : 0.0);
    }
  }
}

TEST(GaussianLogProb, KnownValues) {
  EXPECT_NEAR(gaussian_log_prob(gauss({0.0}, {1.0}), Tensor::vector({0.0})).item(),
              -0.9189385332046727, 1e-13);
  const auto g = gauss({1.0, -2.0}, {0.5, 3.0});
  const double expected = -(std::log(0.5 * std::sqrt(2 * std::numbers::pi)) +
                            std::log(3.0 * std::sqrt(2 * std::numbers::pi)));
  EXPECT_NEAR(gaussian_log_prob(g, g.mean).item(), expected, 1e-13);
}

TEST(GaussianLogProb, BatchedRowsReduceToVector) {
  const DiagGaussian g{Tensor::zeros({3, 2}), Tensor::filled({3, 2}, 1.0)};
  const Tensor lp = gaussian_log_prob(g, Tensor::zeros({3, 2}));
  EXPECT_EQ(lp.shape(), Shape{3});
  EXPECT_NEAR(lp[2], 2 * -0.9189385332046727, 1e-13);
}

// Composite Simpson quadrature of the density and its first moment.
TEST(GaussianLogProb, IntegratesToOneByQuadrature) {
  for (const auto& [mu, sigma] : {std::pair{0.0, 1.0}, {1.5, 0.3}, {-2.0, 2.5}}) {
    const auto g = gauss({mu}, {sigma});
    const int n = 4000;
    const double a = mu - 12 * sigma, b = mu + 12 * sigma, h = (b - a) / n;
    double mass = 0.0, first = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double x = a + i * h;
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      const double d = std::exp(gaussian_log_prob(g, Tensor::vector({x})).item());
      mass += w * d;
      first += w * d * x;
    }
    mass *= h / 3;
    first *= h / 3;
    EXPECT_NEAR(mass, 1.0, 1e-6);
    EXPECT_NEAR(first, mu, 1e-6);
  }
}

TEST(GaussianKl, SelfAndUnitShift) {
  const auto p = gauss({0.3, -1.0}, {0.8, 2.0});
  EXPECT_NEAR(gaussian_kl(p, p).item(), 0.0, 1e-15);
  EXPECT_NEAR(gaussian_kl(gauss({1.0}, {1.0}), gauss({0.0}, {1.0})).item(), 0.5, 1e-15);
}

TEST(GaussianKl, NonNegativeAndZeroOnlyAtEquality) {
  Rng rng(17);
  for (int trial = 0; trial < 500; ++trial) {
    const auto mp = random_vector(3, rng, -2, 2), mq = random_vector(3, rng, -2, 2);
    const auto sp = random_vector(3, rng, 0.1, 3), sq = random_vector(3, rng, 0.1, 3);
    const double kl = gaussian_kl(gauss(mp, sp), gauss(mq, sq)).item();
    EXPECT_GT(kl, 0.0);
    EXPECT_NEAR(gaussian_kl(gauss(mp, sp), gauss(mp, sp)).item(), 0.0, 1e-12);
  }
}

TEST(GaussianKl, MatchesMonteCarloWithinThreeStandardErrors) {
  const auto p = gauss({0.4, -0.3}, {0.9, 1.4});
  const auto q = gauss({-0.2, 0.5}, {1.3, 0.8});
  const double exact = gaussian_kl(p, q).item();
  Rng rng(2024);
  const std::size_t n = 1'000'000;
  std::vector<double> mp(2 * n), sp(2 * n), mq(2 * n), sq(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    mp[2 * i] = 0.4; mp[2 * i + 1] = -0.3; sp[2 * i] = 0.9; sp[2 * i + 1] = 1.4;
    mq[2 * i] = -0.2; mq[2 * i + 1] = 0.5; sq[2 * i] = 1.3; sq[2 * i + 1] = 0.8;
  }
  const DiagGaussian pb{Tensor::matrix(n, 2, mp), Tensor::matrix(n, 2, sp)};
  const DiagGaussian qb{Tensor::matrix(n, 2, mq), Tensor::matrix(n, 2, sq)};
  const Tensor x = gaussian_rsample(pb, rng);
  const Tensor diff = sub(gaussian_log_prob(pb, x), gaussian_log_prob(qb, x));
  double m = 0.0, m2 = 0.0;
  for (double d : diff.values()) {
    m += d;
    m2 += d * d;
  }
  m /= static_cast<double>(n);
  const double se = std::sqrt((m2 / static_cast<double>(n) - m * m) / static_cast<double>(n));
  EXPECT_LE(std::abs(m - exact), 3 * se) << "exact " << exact << " mc " << m;
}

TEST(GaussianKl, GradientMatchesFiniteDifferences) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto params = [&] {
      auto v = random_vector(8, rng, -1, 1);
      for (int i : {2, 3, 6, 7}) v[static_cast<std::size_t>(i)] = std::abs(v[static_cast<std::size_t>(i)]) + 0.2;
      return v;
    }();
    auto kl_of = [](const std::vector<Tensor>& t) {
      return gaussian_kl({t[0], t[1]}, {t[2], t[3]});
    };
    auto split = [](const std::vector<double>& v) {
      return std::vector<Tensor>{Tensor::vector({v[0], v[1]}), Tensor::vector({v[2], v[3]}),
                                 Tensor::vector({v[4], v[5]}), Tensor::vector({v[6], v[7]})};
    };
    Tape tape;
    std::vector<Tensor> leaves;
    for (const auto& t : split(params)) leaves.push_back(tape.leaf(t));
    const Gradients g = tape.backward(kl_of(leaves));
    std::vector<double> analytic;
    for (const auto& l : leaves) {
      const auto gl = g.wrt(l);
      analytic.insert(analytic.end(), gl.begin(), gl.end());
    }
    const auto fd = numeric_gradient(
        [&](const std::vector<double>& v) { return kl_of(split(v)).item(); }, params);
    EXPECT_LE(max_relative_error(analytic, fd), 1e-4);
  }
}

TEST(GaussianFromRaw, StdRespectsFloor) {
  const auto g = gaussian_from_raw(Tensor::zeros({3}), Tensor::vector({-80.0, 0.0, 5.0}));
  EXPECT_GE(g.std[0], kStdFloor);
  EXPECT_NEAR(g.std[0], kStdFloor, 1e-15);
  EXPECT_NEAR(g.std[1], std::log(2.0) + kStdFloor, 1e-15);
}

TEST(TruncatedGeometricPmf, HorizonCaseValues) {
  const auto pmf = truncgeom_pmf(0.99, 3);
  ASSERT_EQ(pmf.size(), 4u);
  EXPECT_NEAR(pmf[0], 0.01, 1e-15);
  EXPECT_NEAR(pmf[1], 0.0099, 1e-15);
  EXPECT_NEAR(pmf[2], 0.009801, 1e-15);
  EXPECT_NEAR(pmf[3], 0.970299, 1e-15);
  const auto k1 = truncgeom_pmf(0.3, 1);
  EXPECT_DOUBLE_EQ(k1[0], 0.7);
  EXPECT_DOUBLE_EQ(k1[1], 0.3);
  EXPECT_EQ(TruncatedGeometric(0.5, 2).pmf(3), 0.0);
  EXPECT_THROW(TruncatedGeometric(1.0, 2), ContractError);
  EXPECT_THROW(TruncatedGeometric(0.5, 0), ContractError);
}

TEST(TruncatedGeometricPmf, ValidDistributionForAllParameters) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(1e-6, 1 - 1e-6);
  for (int trial = 0; trial < 200; ++trial) {
    const double gamma = u(rng);
    for (int k = 1; k <= 10; ++k) {
      const auto pmf = truncgeom_pmf(gamma, k);
      double total = 0.0;
      for (double p : pmf) {
        EXPECT_GE(p, 0.0);
        total += p;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(TruncatedGeometricIdentity, HandEnumeratedAndZero) {
  const std::vector<double> ones = {1.0, 1.0};
  const auto s = truncgeom_discounted_identity(ones, 0.5, 1);
  EXPECT_DOUBLE_EQ(s.lhs, 1.5);
  EXPECT_DOUBLE_EQ(s.rhs, 1.5);
  const std::vector<double> zeros(4, 0.0);
  const auto z = truncgeom_discounted_identity(zeros, 0.9, 3);
  EXPECT_EQ(z.lhs, 0.0);
  EXPECT_EQ(z.rhs, 0.0);
  EXPECT_THROW(truncgeom_discounted_identity(zeros, 0.9, 2), DimensionError);
}

TEST(TruncatedGeometricIdentity, RandomSweep) {
  Rng rng(99);
  std::uniform_real_distribution<double> gd(0.01, 0.99);
  std::uniform_int_distribution<int> kd(1, 10);
  for (int trial = 0; trial < 100; ++trial) {
    const int k = kd(rng);
    const auto x = random_vector(static_cast<std::size_t>(k) + 1, rng, -5, 5);
    const auto s = truncgeom_discounted_identity(x, gd(rng), k);
    EXPECT_LE(std::abs(s.lhs - s.rhs), 1e-12);
  }
}

TEST(BernoulliCrossEntropy, Values) {
  EXPECT_NEAR(bernoulli_cross_entropy(1.0 - 1e-9, 1), 1e-6, 1e-9);
  EXPECT_NEAR(bernoulli_cross_entropy(0.5, 1), std::log(2.0), 1e-15);
  EXPECT_NEAR(bernoulli_cross_entropy(0.5, 0), std::log(2.0), 1e-15);
  EXPECT_TRUE(std::isfinite(bernoulli_cross_entropy(0.0, 1)));
  for (int label : {0, 1}) {
    double best_p = -1, best = 1e300;
    for (int i = 0; i <= 1000; ++i) {
      const double p = i / 1000.0;
      const double v = bernoulli_cross_entropy(p, label);
      if (v < best) {
        best = v;
        best_p = p;
      }
    }
    EXPECT_DOUBLE_EQ(best_p, static_cast<double>(label));
  }
}

TEST(BernoulliCrossEntropy, TensorFormMatchesScalar) {
  const Tensor probs = Tensor::vector({0.2, 0.7, 1.0, 0.0});
  const Tensor labels = Tensor::vector({1, 0, 1, 0});
  const Tensor ce = bernoulli_cross_entropy(probs, labels);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_NEAR(ce[i], bernoulli_cross_entropy(probs[i], static_cast<int>(labels[i])), 1e-15);
  }
}

TEST(CategoricalDist, ValidatesAndSamples) {
  EXPECT_THROW(Categorical({0.5, 0.6}), DomainError);
  EXPECT_THROW(Categorical({-0.1, 1.1}), DomainError);
  const Categorical c({0.2, 0.5, 0.3});
  Rng rng(5);
  std::vector<int> counts(3, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) counts[c.sample(rng)]++;
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = c.prob(i);
    EXPECT_NEAR(counts[i] / static_cast<double>(n), p, 4 * std::sqrt(p * (1 - p) / n));
  }
}

}  // namespace
}  // namespace alm
