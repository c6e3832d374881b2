#include "alm/dists.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "alm/error.hpp"

namespace alm {
namespace {

Tensor sum_last(const Tensor& t) {
  if (t.rank() == 0) return t;
  return sum(t, t.rank() - 1);
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
}

}  // namespace

DiagGaussian gaussian_from_raw(const Tensor& mean, const Tensor& raw_std) {
  require_same_shape("gaussian_from_raw", mean, raw_std);
  return {mean, add_scalar(softplus(raw_std), kStdFloor)};
}

Tensor gaussian_rsample(const DiagGaussian& g, const Tensor& noise) {
  require_same_shape("gaussian_rsample", g.mean, noise);
  return add(g.mean, mul(g.std, noise));
}

Tensor gaussian_rsample(const DiagGaussian& g, Rng& rng) {
  return gaussian_rsample(g, standard_normal(g.mean.shape(), rng));
}

Tensor gaussian_log_prob(const DiagGaussian& g, const Tensor& x) {
  require_same_shape("gaussian_log_prob", g.mean, x);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  const Tensor z = div(sub(x, g.mean), g.std);
  const Tensor per_dim = add_scalar(negate(add(scale(square(z), 0.5), log(g.std))),
                                    -half_log_2pi);
  return sum_last(per_dim);
}

Tensor gaussian_kl(const DiagGaussian& p, const DiagGaussian& q) {
  require_same_shape("gaussian_kl", p.mean, q.mean);
  const Tensor var_q = square(q.std);
  const Tensor ratio = div(add(square(p.std), square(sub(p.mean, q.mean))), var_q);
  const Tensor per_dim =
      add_scalar(add(sub(log(q.std), log(p.std)), scale(ratio, 0.5)), -0.5);
  return sum_last(per_dim);
}

Categorical::Categorical(std::vector<double> probs) : probs_(std::move(probs)) {
  if (probs_.empty()) throw ContractError("Categorical: empty support");
  double total = 0.0;
  for (double p : probs_) {
    if (!(p >= 0.0)) throw DomainError("Categorical: negative probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-12) {
    std::ostringstream os;
    os.precision(17);
    os << "Categorical: probabilities sum to " << total;
    throw DomainError(os.str());
  }
}

std::size_t Categorical::sample(Rng& rng) const {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double draw = u(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs_.size(); ++i) {
    acc += probs_[i];
    if (draw < acc) return i;
  }
  return probs_.size() - 1;
}

TruncatedGeometric::TruncatedGeometric(double gamma, int horizon)
    : gamma_(gamma), horizon_(horizon) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ContractError("TruncatedGeometric: gamma must be in (0,1)");
  if (horizon < 1) throw ContractError("TruncatedGeometric: K must be >= 1");
}

double TruncatedGeometric::pmf(int h) const {
  if (h < 0 || h > horizon_) return 0.0;
  if (h == horizon_) return std::pow(gamma_, horizon_);
  return (1.0 - gamma_) * std::pow(gamma_, h);
}

std::vector<double> TruncatedGeometric::pmf() const {
  std::vector<double> out(static_cast<std::size_t>(horizon_) + 1);
  for (int h = 0; h <= horizon_; ++h) out[static_cast<std::size_t>(h)] = pmf(h);
  return out;
}

std::vector<double> truncgeom_pmf(double gamma, int horizon) {
  return TruncatedGeometric(gamma, horizon).pmf();
}

IdentitySides truncgeom_discounted_identity(std::span<const double> x, double gamma,
                                            int horizon) {
  if (x.size() != static_cast<std::size_t>(horizon) + 1) {
    throw DimensionError("truncgeom identity: need K+1 = " + std::to_string(horizon + 1) +
                         " values, got " + std::to_string(x.size()));
  }
  const TruncatedGeometric dist(gamma, horizon);
  double lhs = 0.0;
  for (int h = 0; h <= horizon; ++h) {
    double partial = 0.0;
    for (int t = 0; t <= h; ++t) partial += x[static_cast<std::size_t>(t)];
    lhs += dist.pmf(h) * partial;
  }
  double rhs = 0.0;
  double discount = 1.0;
  for (int t = 0; t <= horizon; ++t) {
    rhs += discount * x[static_cast<std::size_t>(t)];
    discount *= gamma;
  }
  return {lhs, rhs};
}

std::vector<double> lambda_weights(double lambda, int horizon) {
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ContractError("lambda must lie in [0,1)");
  if (horizon < 1) throw ContractError("lambda_weights: K must be >= 1");
  std::vector<double> w(static_cast<std::size_t>(horizon));
  for (int k = 1; k < horizon; ++k) {
    w[static_cast<std::size_t>(k) - 1] = (1.0 - lambda) * std::pow(lambda, k - 1);
  }
  w.back() = std::pow(lambda, horizon - 1);
  return w;
}

double bernoulli_cross_entropy(double p, int label) {
  const double q = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  return label == 1 ? -std::log(q) : -std::log1p(-q);
}

Tensor bernoulli_cross_entropy(const Tensor& probs, const Tensor& labels) {
  require_same_shape("bernoulli_cross_entropy", probs, labels);
  const Tensor p = clamp(probs, kProbClamp, 1.0 - kProbClamp);
  const Tensor pos = mul(labels, log(p));
  const Tensor neg = mul(add_scalar(negate(labels), 1.0), log(add_scalar(negate(p), 1.0)));
  return negate(add(pos, neg));
}

}  // namespace alm
