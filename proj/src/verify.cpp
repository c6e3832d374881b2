#include <cmath>
#include <ostream>

#include <json.hpp>

#include "alm/dists.hpp"
#include "alm/harness.hpp"
#include "alm/oracle.hpp"

namespace alm {
namespace {

constexpr double kBoundTol = 1e-10;
constexpr double kTightTol = 1e-9;
constexpr double kHorizonTol = 1e-12;
constexpr double kPsiTol = 1e-10;

struct Reporter {
  std::ostream& out;
  int failures = 0;

  // pass when margin >= -tol
  void bound(const std::string& check, std::uint64_t seed, int k, double lhs, double rhs, double tol) {
    emit(check, seed, k, lhs, rhs, rhs - lhs, rhs - lhs >= -tol);
  }
  // pass when |lhs - rhs| <= tol
  void equal(const std::string& check, std::uint64_t seed, int k, double lhs, double rhs, double tol) {
    emit(check, seed, k, lhs, rhs, -std::abs(lhs - rhs), std::abs(lhs - rhs) <= tol);
  }

  void emit(const std::string& check, std::uint64_t seed, int k, double lhs, double rhs, double margin, bool pass) {
    nlohmann::json j = {{"check", check}, {"seed", seed}, {"K", k},      {"lhs", lhs},
                        {"rhs", rhs},     {"margin", margin}, {"pass", pass}};
    out << j.dump() << '\n';
    if (!pass) ++failures;
  }
};

}  // namespace

int run_verify(int instances, int k_max, std::uint64_t seed, std::ostream& out) {
  if (instances < 1) throw std::invalid_argument("verify: instances must be >= 1");
  if (k_max < 1) throw std::invalid_argument("verify: k_max must be >= 1");
  Reporter rep{out};
  for (int i = 0; i < instances; ++i) {
    const std::uint64_t s = seed + static_cast<std::uint64_t>(i);
    const auto inst = oracle::random_instance(s);
    const auto& mdp = inst.mdp;
    const double j = oracle::exact_returns(mdp, inst.alm);
    const double log_j = std::log((1 - mdp.gamma) * j);

    const auto mono = oracle::check_monotone(mdp, inst.alm, k_max);
    for (int k = 1; k <= k_max; ++k) {
      rep.bound("lower_bound", s, k, std::exp(mono.bounds[k - 1]) / (1 - mdp.gamma), j, kBoundTol);
    }
    for (int k = 1; k < k_max; ++k) rep.bound("monotone", s, k, mono.bounds[k], mono.bounds[k - 1], kBoundTol);

    for (int k = 1; k <= std::min(k_max, 2); ++k) {
      const auto t = oracle::check_tightness(mdp, inst.alm, k);
      rep.equal("tightness", s, k, t.lhs, t.rhs, kTightTol);
    }

    const int k2 = 1 + i % std::min(k_max, 3);
    const auto l2 = oracle::lemma2_identity(mdp, inst.alm, k2);
    rep.equal("psi_identity", s, k2, l2.lhs, l2.rhs, kPsiTol);

    Rng rng(derive_seed(s, 0x5e1f));
    {
      std::uniform_real_distribution<double> u(-2.0, 2.0), g(0.05, 0.995);
      const int k = 1 + i % 6;
      std::vector<double> x(static_cast<std::size_t>(k) + 1);
      for (auto& v : x) v = u(rng);
      const auto sides = truncgeom_discounted_identity(x, g(rng), k);
      rep.equal("horizon_identity", s, k, sides.lhs, sides.rhs, kHorizonTol);
    }
    {
      std::uniform_real_distribution<double> u(-3.0, 3.0);
      std::vector<double> f(static_cast<std::size_t>(2 + i % 4));
      for (auto& v : f) v = u(rng);
      const double best = oracle::lemma3_objective(f, oracle::lemma3_maximizer(f));
      double challenger = -std::numeric_limits<double>::infinity();
      const auto p_star = oracle::lemma3_maximizer(f);
      std::uniform_real_distribution<double> eps(1e-3, 0.1);
      for (int trial = 0; trial < 1000; ++trial) {
        auto q = oracle::random_stochastic(1, static_cast<int>(f.size()), rng);
        if (trial % 2 == 1) {
          // local perturbation of the maximizer
          const double e = eps(rng);
          for (std::size_t j = 0; j < q.size(); ++j) q[j] = (1.0 - e) * p_star[j] + e * q[j];
        }
        challenger = std::max(challenger, oracle::lemma3_objective(f, q));
      }
      rep.bound("softmax_maximizer", s, 0, challenger, best, 1e-12);
    }

    const int kl = std::min(k_max, 3);
    rep.bound("lambda_bound", s, kl, oracle::lambda_weighted_bound(mdp, inst.alm, 0.95, kl), log_j, kBoundTol);

    const auto behavior = oracle::random_stochastic(mdp.num_states, mdp.num_actions, rng);
    const double log_jb = std::log((1 - mdp.gamma) * oracle::exact_returns(mdp, behavior));
    rep.bound("offline_bound", s, k2, oracle::offline_bound(mdp, inst.alm, behavior, k2), log_jb, kBoundTol);
  }
  return rep.failures;
}

}  // namespace alm
