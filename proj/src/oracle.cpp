#include "alm/oracle.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>

#include "alm/dists.hpp"
#include "alm/error.hpp"

namespace alm::oracle {
namespace {

constexpr double kRowTolerance = 1e-12;
constexpr double kInstanceFloor = 1e-6;

std::size_t sz(int n) { return static_cast<std::size_t>(n); }

void check_rows(const std::vector<double>& table, std::size_t rows, std::size_t cols,
                const char* name, bool strictly_positive) {
  if (table.size() != rows * cols) {
    throw DimensionError(std::string(name) + ": expected " + std::to_string(rows * cols) +
                         " entries, got " + std::to_string(table.size()));
  }
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      const double v = table[r * cols + c];
      if (!(v >= 0.0) || (strictly_positive && !(v > 0.0))) {
        throw DomainError(std::string(name) + "[" + std::to_string(r) + "][" +
                          std::to_string(c) + "] = " + std::to_string(v) +
                          (strictly_positive ? " is not > 0" : " is negative"));
      }
      total += v;
    }
    if (std::abs(total - 1.0) > kRowTolerance) {
      std::ostringstream os;
      os.precision(17);
      os << name << " row " << r << " sums to " << total;
      throw DomainError(os.str());
    }
  }
}

std::vector<double> log_table(const std::vector<double>& t) {
  std::vector<double> out(t.size());
  std::transform(t.begin(), t.end(), out.begin(), [](double v) { return std::log(v); });
  return out;
}

// V for the unnormalised return under an [S][A] state policy.
Eigen::VectorXd state_values(const TabularMDP& mdp, std::span<const double> policy) {
  const int S = mdp.num_states, A = mdp.num_actions;
  if (policy.size() != sz(S) * sz(A)) {
    throw DimensionError("state policy: expected " + std::to_string(S * A) + " entries");
  }
  Eigen::MatrixXd system = Eigen::MatrixXd::Identity(S, S);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      const double pa = policy[sz(s) * sz(A) + sz(a)];
      rhs(s) += pa * mdp.r(s, a);
      for (int n = 0; n < S; ++n) system(s, n) -= mdp.gamma * pa * mdp.p(s, a, n);
    }
  }
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(system);
  Eigen::VectorXd v = lu.solve(rhs);
  // One round of iterative refinement, then the residual contract.
  v += lu.solve(rhs - system * v);
  const double residual = (system * v - rhs).lpNorm<Eigen::Infinity>();
  if (!(residual <= 1e-12 * std::max(1.0, v.lpNorm<Eigen::Infinity>()))) {
    throw NumericError("policy evaluation residual " + std::to_string(residual));
  }
  return v;
}

void require_horizon(int horizon) {
  if (horizon < 1) throw ContractError("rollout horizon K must be >= 1");
}

// Depth-first enumeration of every (s, z, a)_{0..K} trajectory under the K-step
// latent rollout distribution, accumulating the expectation of a per-step
// integrand.
class RolloutSum {
 public:
  RolloutSum(const TabularMDP& mdp, const TabularALM& alm, int horizon,
             const std::vector<double>& q, const std::vector<double>* behavior)
      : mdp_(mdp), alm_(alm), horizon_(horizon), S_(mdp.num_states),
        A_(mdp.num_actions), Z_(alm.num_latents) {
    log_r_ = log_table(mdp.reward);
    log_e_ = log_table(alm.encoder);
    log_m_ = log_table(alm.model);
    log_pi_ = log_table(alm.policy);
    log_q_ = log_table(q);
    if (behavior != nullptr) log_b_ = log_table(*behavior);
    discount_.resize(sz(horizon) + 1);
    for (int t = 0; t <= horizon; ++t) discount_[sz(t)] = std::pow(mdp.gamma, t);
  }

  double run() {
    total_ = 0.0;
    for (int s = 0; s < S_; ++s) {
      for (int z = 0; z < Z_; ++z) {
        visit(0, s, z, mdp_.p0[sz(s)] * alm_.e(s, z), 0.0);
      }
    }
    return total_;
  }

 private:
  void visit(int t, int s, int z, double prob, double acc) {
    const double g = discount_[sz(t)];
    for (int a = 0; a < A_; ++a) {
      const std::size_t za = sz(z) * sz(A_) + sz(a);
      const std::size_t sa = sz(s) * sz(A_) + sz(a);
      const double pa = prob * alm_.policy[za];
      double here = acc;
      if (!log_b_.empty()) here += g * (log_b_[sa] - log_pi_[za]);
      if (t == horizon_) {
        total_ += pa * (here + g * log_q_[sa]);
        continue;
      }
      here += g * (1.0 - mdp_.gamma) * log_r_[sa];
      for (int n = 0; n < S_; ++n) {
        const double ps = pa * mdp_.p(s, a, n);
        for (int zn = 0; zn < Z_; ++zn) {
          const std::size_t m_idx = za * sz(Z_) + sz(zn);
          visit(t + 1, n, zn, ps * alm_.model[m_idx],
                here + g * (log_e_[sz(n) * sz(Z_) + sz(zn)] - log_m_[m_idx]));
        }
      }
    }
  }

  const TabularMDP& mdp_;
  const TabularALM& alm_;
  int horizon_, S_, A_, Z_;
  std::vector<double> log_r_, log_e_, log_m_, log_pi_, log_q_, log_b_, discount_;
  double total_ = 0.0;
};

void require_positive(const std::vector<double>& values, const char* name) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!(values[i] > 0.0)) {
      throw DomainError(std::string(name) + "[" + std::to_string(i) + "] = " +
                        std::to_string(values[i]) + " must be > 0 inside a log");
    }
  }
}

std::vector<double> dirichlet_row(int n, Rng& rng) {
  std::gamma_distribution<double> g(1.0, 1.0);
  std::vector<double> row(sz(n));
  for (auto& v : row) v = std::max(g(rng), kInstanceFloor);
  double total = std::accumulate(row.begin(), row.end(), 0.0);
  for (auto& v : row) v /= total;
  // Renormalisation can only move entries by a relative 1e-16; clamp again so
  // the floor survives, then put the rounding residue on the largest entry.
  for (auto& v : row) v = std::max(v, kInstanceFloor);
  total = std::accumulate(row.begin(), row.end(), 0.0);
  auto largest = std::max_element(row.begin(), row.end());
  *largest += 1.0 - total;
  return row;
}

}  // namespace

void TabularMDP::validate() const {
  if (num_states < 1 || num_actions < 1) throw ContractError("TabularMDP: empty state or action set");
  if (!(gamma > 0.0 && gamma < 1.0)) {
    throw ContractError("TabularMDP: gamma must lie in (0,1), got " + std::to_string(gamma));
  }
  check_rows(p0, 1, sz(num_states), "p0", false);
  check_rows(transition, sz(num_states) * sz(num_actions), sz(num_states), "P", false);
  if (reward.size() != sz(num_states) * sz(num_actions)) throw DimensionError("reward table size");
  for (std::size_t i = 0; i < reward.size(); ++i) {
    if (!(reward[i] >= 0.0)) {
      throw DomainError("reward[" + std::to_string(i) + "] = " + std::to_string(reward[i]) +
                        " is negative");
    }
  }
}

void TabularALM::validate(const TabularMDP& mdp) const {
  if (num_latents < 1) throw ContractError("TabularALM: empty latent set");
  check_rows(encoder, sz(mdp.num_states), sz(num_latents), "e", true);
  check_rows(model, sz(num_latents) * sz(mdp.num_actions), sz(num_latents), "m", true);
  check_rows(policy, sz(num_latents), sz(mdp.num_actions), "pi", true);
}

std::vector<double> state_policy(const TabularMDP& mdp, const TabularALM& alm) {
  const int S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> out(sz(S) * sz(A), 0.0);
  for (int s = 0; s < S; ++s) {
    for (int z = 0; z < alm.num_latents; ++z) {
      for (int a = 0; a < A; ++a) out[sz(s) * sz(A) + sz(a)] += alm.e(s, z) * alm.pi(z, a, A);
    }
  }
  return out;
}

double exact_returns(const TabularMDP& mdp, std::span<const double> policy) {
  mdp.validate();
  const Eigen::VectorXd v = state_values(mdp, policy);
  double j = 0.0;
  for (int s = 0; s < mdp.num_states; ++s) j += mdp.p0[sz(s)] * v(s);
  return j;
}

double exact_returns(const TabularMDP& mdp, const TabularALM& alm) {
  alm.validate(mdp);
  return exact_returns(mdp, state_policy(mdp, alm));
}

std::vector<double> exact_q(const TabularMDP& mdp, std::span<const double> policy) {
  mdp.validate();
  const Eigen::VectorXd v = state_values(mdp, policy);
  const int S = mdp.num_states, A = mdp.num_actions;
  std::vector<double> q(sz(S) * sz(A));
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double next = 0.0;
      for (int n = 0; n < S; ++n) next += mdp.p(s, a, n) * v(n);
      q[sz(s) * sz(A) + sz(a)] = (1.0 - mdp.gamma) * (mdp.r(s, a) + mdp.gamma * next);
    }
  }
  return q;
}

std::vector<double> exact_q(const TabularMDP& mdp, const TabularALM& alm) {
  alm.validate(mdp);
  return exact_q(mdp, state_policy(mdp, alm));
}

double eval_lower_bound(const TabularMDP& mdp, const TabularALM& alm, int horizon) {
  require_horizon(horizon);
  alm.validate(mdp);
  require_positive(mdp.reward, "r");
  const auto q = exact_q(mdp, alm);
  require_positive(q, "Q");
  return RolloutSum(mdp, alm, horizon, q, nullptr).run();
}

MonotoneCheck check_monotone(const TabularMDP& mdp, const TabularALM& alm, int k_max,
                             double tolerance) {
  if (k_max < 2) throw ContractError("check_monotone: K_max must be >= 2");
  MonotoneCheck out;
  out.worst_increase = -std::numeric_limits<double>::infinity();
  for (int k = 1; k <= k_max; ++k) out.bounds.push_back(eval_lower_bound(mdp, alm, k));
  for (std::size_t k = 0; k + 1 < out.bounds.size(); ++k) {
    out.worst_increase = std::max(out.worst_increase, out.bounds[k + 1] - out.bounds[k]);
  }
  out.pass = out.worst_increase <= tolerance;
  return out;
}

std::vector<TrajectoryStep> TrajectoryDist::decode(std::size_t index) const {
  std::vector<TrajectoryStep> steps(sz(horizon) + 1);
  for (int t = horizon; t >= 0; --t) {
    auto& step = steps[sz(t)];
    step.a = static_cast<int>(index % sz(num_actions));
    index /= sz(num_actions);
    step.z = static_cast<int>(index % sz(num_latents));
    index /= sz(num_latents);
    step.s = static_cast<int>(index % sz(num_states));
    index /= sz(num_states);
  }
  return steps;
}

double TrajectoryDist::total() const { return std::accumulate(prob.begin(), prob.end(), 0.0); }

std::vector<TrajectoryDist> trajectory_prior(const TabularMDP& mdp, const TabularALM& alm,
                                             int horizon) {
  require_horizon(horizon);
  alm.validate(mdp);
  const auto q = exact_q(mdp, alm);
  const int S = mdp.num_states, A = mdp.num_actions, Z = alm.num_latents;
  const std::size_t branch = sz(S) * sz(Z) * sz(A);

  std::vector<TrajectoryDist> out(sz(horizon) + 1);
  std::size_t n = 1;
  for (int h = 0; h <= horizon; ++h) {
    n *= branch;
    auto& d = out[sz(h)];
    d.horizon = h;
    d.num_states = S;
    d.num_latents = Z;
    d.num_actions = A;
    d.prob.assign(n, 0.0);
    d.psi.assign(n, 0.0);
  }

  // Level h is filled from level h-1 by extending each trajectory one step.
  for (int s = 0; s < S; ++s) {
    for (int z = 0; z < Z; ++z) {
      for (int a = 0; a < A; ++a) {
        const std::size_t idx = (sz(s) * sz(Z) + sz(z)) * sz(A) + sz(a);
        out[0].prob[idx] = mdp.p0[sz(s)] * alm.e(s, z) * alm.pi(z, a, A);
        out[0].psi[idx] = horizon == 0 ? q[sz(s) * sz(A) + sz(a)] : mdp.r(s, a);
      }
    }
  }
  for (int h = 1; h <= horizon; ++h) {
    const auto& prev = out[sz(h) - 1];
    auto& cur = out[sz(h)];
    for (std::size_t i = 0; i < prev.prob.size(); ++i) {
      const std::size_t a_prev = i % sz(A);
      const std::size_t s_prev = i / (sz(Z) * sz(A)) % sz(S);
      for (int s = 0; s < S; ++s) {
        const double ps = prev.prob[i] * mdp.p(static_cast<int>(s_prev), static_cast<int>(a_prev), s);
        for (int z = 0; z < Z; ++z) {
          for (int a = 0; a < A; ++a) {
            const std::size_t idx = i * branch + (sz(s) * sz(Z) + sz(z)) * sz(A) + sz(a);
            cur.prob[idx] = ps * alm.e(s, z) * alm.pi(z, a, A);
            cur.psi[idx] = h == horizon ? q[sz(s) * sz(A) + sz(a)] : mdp.r(s, a);
          }
        }
      }
    }
  }
  return out;
}

std::vector<TrajectoryDist> optimal_latent_dynamics(const std::vector<TrajectoryDist>& prior) {
  std::vector<TrajectoryDist> out = prior;
  for (auto& d : out) {
    double norm = 0.0;
    for (std::size_t i = 0; i < d.prob.size(); ++i) norm += d.prob[i] * d.psi[i];
    if (!(norm > 0.0)) {
      throw DomainError("optimal latent dynamics: zero normaliser at H=" +
                        std::to_string(d.horizon));
    }
    for (std::size_t i = 0; i < d.prob.size(); ++i) d.prob[i] = d.prob[i] * d.psi[i] / norm;
  }
  return out;
}

std::vector<TrajectoryDist> optimal_latent_dynamics(const TabularMDP& mdp,
                                                    const TabularALM& alm, int horizon) {
  return optimal_latent_dynamics(trajectory_prior(mdp, alm, horizon));
}

std::vector<double> optimal_discount(const std::vector<TrajectoryDist>& prior, double gamma) {
  const int horizon = static_cast<int>(prior.size()) - 1;
  const TruncatedGeometric pk(gamma, horizon);
  std::vector<double> w(prior.size());
  for (std::size_t h = 0; h < prior.size(); ++h) {
    double expected = 0.0;
    for (std::size_t i = 0; i < prior[h].prob.size(); ++i) expected += prior[h].prob[i] * prior[h].psi[i];
    w[h] = pk.pmf(static_cast<int>(h)) * expected;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (!(total > 0.0)) throw DomainError("optimal discount: zero normaliser");
  for (auto& v : w) v /= total;
  return w;
}

std::vector<double> optimal_discount(const TabularMDP& mdp, const TabularALM& alm, int horizon) {
  return optimal_discount(trajectory_prior(mdp, alm, horizon), mdp.gamma);
}

double discount_bound(const std::vector<TrajectoryDist>& prior,
                      const std::vector<TrajectoryDist>& q, std::span<const double> discount,
                      double gamma) {
  if (q.size() != prior.size() || discount.size() != prior.size()) {
    throw DimensionError("discount_bound: horizon tables disagree");
  }
  const TruncatedGeometric pk(gamma, static_cast<int>(prior.size()) - 1);
  double total = 0.0;
  for (std::size_t h = 0; h < prior.size(); ++h) {
    if (discount[h] == 0.0) continue;
    const double log_ratio_h = std::log(pk.pmf(static_cast<int>(h)) / discount[h]);
    double inner = 0.0;
    for (std::size_t i = 0; i < q[h].prob.size(); ++i) {
      const double qi = q[h].prob[i];
      if (qi == 0.0) continue;
      inner += qi * (std::log(prior[h].prob[i] * prior[h].psi[i]) - std::log(qi));
    }
    total += discount[h] * (log_ratio_h + inner);
  }
  return total;
}

Sides check_tightness(const TabularMDP& mdp, const TabularALM& alm, int horizon) {
  const auto prior = trajectory_prior(mdp, alm, horizon);
  const auto q_star = optimal_latent_dynamics(prior);
  const auto g_star = optimal_discount(prior, mdp.gamma);
  return {discount_bound(prior, q_star, g_star, mdp.gamma),
          std::log((1.0 - mdp.gamma) * exact_returns(mdp, alm))};
}

Sides lemma2_identity(const TabularMDP& mdp, const TabularALM& alm, int horizon) {
  const auto prior = trajectory_prior(mdp, alm, horizon);
  const TruncatedGeometric pk(mdp.gamma, horizon);
  double rhs = 0.0;
  for (std::size_t h = 0; h < prior.size(); ++h) {
    double expected = 0.0;
    for (std::size_t i = 0; i < prior[h].prob.size(); ++i) expected += prior[h].prob[i] * prior[h].psi[i];
    rhs += pk.pmf(static_cast<int>(h)) * expected;
  }
  return {(1.0 - mdp.gamma) * exact_returns(mdp, alm), rhs};
}

std::vector<double> lemma3_maximizer(std::span<const double> f) {
  if (f.empty()) throw ContractError("lemma3_maximizer: empty support");
  const double peak = *std::max_element(f.begin(), f.end());
  std::vector<double> p(f.size());
  double total = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) total += p[i] = std::exp(f[i] - peak);
  for (auto& v : p) v /= total;
  return p;
}

double lemma3_objective(std::span<const double> f, std::span<const double> p) {
  if (f.size() != p.size()) throw DimensionError("lemma3_objective: size mismatch");
  double out = 0.0;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (p[i] > 0.0) out += p[i] * (f[i] - std::log(p[i]));
  }
  return out;
}

double lambda_weighted_bound(const TabularMDP& mdp, const TabularALM& alm, double lambda,
                             int k_max) {
  const auto weights = lambda_weights(lambda, k_max);
  double total = 0.0;
  for (int k = 1; k <= k_max; ++k) {
    if (weights[sz(k) - 1] != 0.0) total += weights[sz(k) - 1] * eval_lower_bound(mdp, alm, k);
  }
  return total;
}

double offline_bound(const TabularMDP& mdp, const TabularALM& alm,
                     std::span<const double> behavior, int horizon) {
  require_horizon(horizon);
  alm.validate(mdp);
  std::vector<double> b(behavior.begin(), behavior.end());
  check_rows(b, sz(mdp.num_states), sz(mdp.num_actions), "pi_b", true);
  require_positive(mdp.reward, "r");
  const auto q_b = exact_q(mdp, behavior);
  require_positive(q_b, "Q_b");
  return RolloutSum(mdp, alm, horizon, q_b, &b).run();
}

double log_shift_equivalence(std::span<const double> rewards, double shift) {
  if (!(shift > 0.0)) throw ContractError("log shift: a must be > 0");
  double worst = 0.0;
  for (double r : rewards) {
    if (!(r >= 0.0)) throw DomainError("log shift: reward " + std::to_string(r) + " < 0");
    worst = std::max(worst, std::abs(shift * std::log1p(r / shift) - r));
  }
  return worst;
}

std::vector<double> random_stochastic(int rows, int cols, Rng& rng) {
  std::vector<double> out;
  out.reserve(sz(rows) * sz(cols));
  for (int r = 0; r < rows; ++r) {
    const auto row = dirichlet_row(cols, rng);
    out.insert(out.end(), row.begin(), row.end());
  }
  return out;
}

Instance random_instance(std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_int_distribution<int> size(2, 3);
  std::bernoulli_distribution coin(0.5);
  std::uniform_real_distribution<double> reward(0.1, 1.0);

  Instance inst;
  auto& mdp = inst.mdp;
  mdp.num_states = size(rng);
  mdp.num_actions = size(rng);
  inst.alm.num_latents = size(rng);
  mdp.gamma = coin(rng) ? 0.9 : 0.99;
  mdp.p0 = dirichlet_row(mdp.num_states, rng);
  mdp.transition = random_stochastic(mdp.num_states * mdp.num_actions, mdp.num_states, rng);
  mdp.reward.resize(sz(mdp.num_states) * sz(mdp.num_actions));
  for (auto& r : mdp.reward) r = reward(rng);

  auto& alm = inst.alm;
  const int Z = alm.num_latents;
  alm.encoder = random_stochastic(mdp.num_states, Z, rng);
  alm.model = random_stochastic(Z * mdp.num_actions, Z, rng);
  alm.policy = random_stochastic(Z, mdp.num_actions, rng);
  return inst;
}

}  // namespace alm::oracle
