#pragma once

// Exact evaluation of the ALM objective and its bounds on finite MDPs with
// categorical encoder, latent model and policy. Every K-step expectation is a
// full enumeration of trajectories; infinite-horizon quantities come from a
// linear solve.

#include <cstdint>
#include <span>
#include <vector>

#include "alm/random.hpp"

namespace alm::oracle {

struct TabularMDP {
  int num_states = 0;
  int num_actions = 0;
  std::vector<double> p0;          // [S]
  std::vector<double> transition;  // [S][A][S']
  std::vector<double> reward;      // [S][A], nonnegative
  double gamma = 0.99;

  double p(int s, int a, int next) const {
    return transition[(static_cast<std::size_t>(s) * num_actions + a) * num_states + next];
  }
  double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * num_actions + a]; }

  // Throws ContractError/DomainError describing the first malformed entry.
  void validate() const;
};

struct TabularALM {
  int num_latents = 0;
  std::vector<double> encoder;  // e(z|s): [S][Z]
  std::vector<double> model;    // m(z'|z,a): [Z][A][Z']
  std::vector<double> policy;   // pi(a|z): [Z][A]

  double e(int s, int z) const { return encoder[static_cast<std::size_t>(s) * num_latents + z]; }
  double m(int z, int a, int next, int num_actions) const {
    return model[(static_cast<std::size_t>(z) * num_actions + a) * num_latents + next];
  }
  double pi(int z, int a, int num_actions) const {
    return policy[static_cast<std::size_t>(z) * num_actions + a];
  }

  // Row-stochastic and strictly positive everywhere.
  void validate(const TabularMDP& mdp) const;
};

/// pi_bar(a|s) = sum_z pi(a|z) e(z|s), as an [S][A] table.
std::vector<double> state_policy(const TabularMDP& mdp, const TabularALM& alm);

/// E[sum_t gamma^t r] from p0 under an [S][A] state policy.
double exact_returns(const TabularMDP& mdp, std::span<const double> state_policy);
double exact_returns(const TabularMDP& mdp, const TabularALM& alm);

/// Q(s,a) = E[(1-gamma) sum_t gamma^t r | s,a], [S][A].
std::vector<double> exact_q(const TabularMDP& mdp, std::span<const double> state_policy);
std::vector<double> exact_q(const TabularMDP& mdp, const TabularALM& alm);

/// L^K: expectation under the K-step latent rollout distribution of
///   sum_{t<K} g^t[(1-g) log r(s_t,a_t) + log e(z_{t+1}|s_{t+1}) - log m(z_{t+1}|z_t,a_t)]
///   + g^K log Q(s_K,a_K).
double eval_lower_bound(const TabularMDP& mdp, const TabularALM& alm, int horizon);

struct MonotoneCheck {
  std::vector<double> bounds;  // L^1 .. L^Kmax
  double worst_increase = 0.0;  // max_K (L^{K+1} - L^K), <= 0 when monotone
  bool pass = true;
};
MonotoneCheck check_monotone(const TabularMDP& mdp, const TabularALM& alm, int k_max,
                             double tolerance = 1e-10);

struct TrajectoryStep {
  int s, z, a;
};

/// Table over every length-(H+1) (s,z,a) trajectory in lexicographic order,
/// with the helper value psi (r(s_H,a_H) below K, Q(s_H,a_H) at K).
struct TrajectoryDist {
  int horizon = 0;
  int num_states = 0, num_latents = 0, num_actions = 0;
  std::vector<double> prob;
  std::vector<double> psi;

  std::vector<TrajectoryStep> decode(std::size_t index) const;
  double total() const;
};

/// p(tau|H) for H = 0..K: latents drawn from the encoder at every state.
std::vector<TrajectoryDist> trajectory_prior(const TabularMDP& mdp, const TabularALM& alm,
                                             int horizon);

/// q*(tau|H) proportional to p(tau|H) psi(tau), for H = 0..K.
std::vector<TrajectoryDist> optimal_latent_dynamics(const TabularMDP& mdp,
                                                    const TabularALM& alm, int horizon);
std::vector<TrajectoryDist> optimal_latent_dynamics(const std::vector<TrajectoryDist>& prior);

/// gamma*(H) proportional to P_K(H) E_{p(tau|H)}[psi].
std::vector<double> optimal_discount(const TabularMDP& mdp, const TabularALM& alm, int horizon);
std::vector<double> optimal_discount(const std::vector<TrajectoryDist>& prior, double gamma);

/// sum_H g(H) sum_tau q(tau|H) log[P_K(H) p(tau|H) psi / (g(H) q(tau|H))] for an
/// arbitrary discount pmf g and trajectory tables q aligned with `prior`.
double discount_bound(const std::vector<TrajectoryDist>& prior,
                      const std::vector<TrajectoryDist>& q,
                      std::span<const double> discount, double gamma);

struct Sides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// lhs: the bound above with q* and gamma*; rhs: log((1-g) J).
Sides check_tightness(const TabularMDP& mdp, const TabularALM& alm, int horizon);

/// lhs: (1-g) J by linear solve; rhs: E_{P_K(H)} E_{p(tau|H)}[psi] by enumeration.
Sides lemma2_identity(const TabularMDP& mdp, const TabularALM& alm, int horizon);

/// argmax_p E_p[f - log p] over pmfs on the support of f: softmax(f).
std::vector<double> lemma3_maximizer(std::span<const double> f);
double lemma3_objective(std::span<const double> f, std::span<const double> p);

/// (1-lambda) sum_{k<Kmax} lambda^{k-1} L^k + lambda^{Kmax-1} L^Kmax.
double lambda_weighted_bound(const TabularMDP& mdp, const TabularALM& alm, double lambda,
                             int k_max);

/// Offline variant: expectation under the K-step latent rollout of
///   sum_{t<K} g^t[log e/m + (1-g) log r] + sum_{t<=K} g^t log(pi_b(a_t|s_t)/pi(a_t|z_t))
///   + g^K log Q_b(s_K,a_K)
/// with Q_b the normalised Q of the [S][A] behaviour policy. Lower-bounds
/// log((1-g) J_b).
double offline_bound(const TabularMDP& mdp, const TabularALM& alm,
                     std::span<const double> behavior, int horizon);

/// max_i |a log(1 + r_i/a) - r_i|.
double log_shift_equivalence(std::span<const double> rewards, double shift);

struct Instance {
  TabularMDP mdp;
  TabularALM alm;
};

/// Dirichlet(1) rows floored at 1e-6, rewards U(0.1, 1), gamma in {0.9, 0.99},
/// |S|, |A|, |Z| in {2, 3}.
Instance random_instance(std::uint64_t seed);

/// Random strictly positive [rows][cols] row-stochastic table.
std::vector<double> random_stochastic(int rows, int cols, Rng& rng);

}  // namespace alm::oracle
