#pragma once

#include <span>
#include <vector>

#include "alm/diffmath/ops.hpp"
#include "alm/random.hpp"

namespace alm {

inline constexpr double kStdFloor = 1e-3;
inline constexpr double kProbClamp = 1e-6;

/// Diagonal Gaussian over the last axis. A batch of distributions is a pair
/// of [batch x d] tensors.
struct DiagGaussian {
  Tensor mean;
  Tensor std;
};

/// std = softplus(raw) + kStdFloor.
DiagGaussian gaussian_from_raw(const Tensor& mean, const Tensor& raw_std);

/// mean + std * noise; differentiable in mean and std.
Tensor gaussian_rsample(const DiagGaussian& g, const Tensor& noise);
Tensor gaussian_rsample(const DiagGaussian& g, Rng& rng);

/// Log-density summed over the last axis: scalar for rank-1, [batch] for
/// rank-2 inputs.
Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& x);

/// Closed-form KL(p || q) summed over the last axis.
Tensor gaussian_kl(const DiagGaussian& p, const DiagGaussian& q);

/// Finite distribution with probabilities summing to one.
class Categorical {
 public:
  explicit Categorical(std::vector<double> probs);
  std::size_t size() const { return probs_.size(); }
  double prob(std::size_t i) const { return probs_[i]; }
  std::span<const double> probs() const { return probs_; }
  std::size_t sample(Rng& rng) const;

 private:
  std::vector<double> probs_;
};

/// Horizon distribution P_K(H) over H in {0..K}: (1-g) g^H below K, g^K at K.
class TruncatedGeometric {
 public:
  TruncatedGeometric(double gamma, int horizon);
  double gamma() const { return gamma_; }
  int horizon() const { return horizon_; }
  double pmf(int h) const;
  std::vector<double> pmf() const;

 private:
  double gamma_;
  int horizon_;
};

std::vector<double> truncgeom_pmf(double gamma, int horizon);

struct IdentitySides {
  double lhs;
  double rhs;
};

/// Both sides of E_{P_K(H)}[sum_{t<=H} x_t] = sum_t gamma^t x_t, lhs by
/// enumeration over H and rhs by the direct discounted sum. x has K+1 entries.
IdentitySides truncgeom_discounted_identity(std::span<const double> x, double gamma,
                                            int horizon);

/// Weights over rollout lengths k = 1..K: (1-lambda) lambda^{k-1} below K and
/// the remaining mass lambda^{K-1} on K.
std::vector<double> lambda_weights(double lambda, int horizon);

/// -[y log p + (1-y) log(1-p)] with p clamped to [kProbClamp, 1-kProbClamp].
double bernoulli_cross_entropy(double p, int label);

/// Elementwise cross-entropy of probabilities against 0/1 labels (same shape).
Tensor bernoulli_cross_entropy(const Tensor& probs, const Tensor& labels);

}  // namespace alm
