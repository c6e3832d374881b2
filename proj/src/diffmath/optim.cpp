#include "alm/diffmath/optim.hpp"

#include <cmath>

#include "alm/error.hpp"

namespace alm {

AdamState::AdamState(const std::vector<Param>& params, double lr)
    : learning_rate(lr) {
  for (const auto& p : params) {
    first_moment.emplace_back(p.value.size(), 0.0);
    second_moment.emplace_back(p.value.size(), 0.0);
  }
}

void adam_step(AdamState& state, std::vector<Param>& params, const GradList& grads) {
  if (grads.size() != params.size() || state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) +
                         " params, " + std::to_string(grads.size()) + " grads, " +
                         std::to_string(state.first_moment.size()) + " moments");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].value.size() ||
        state.first_moment[i].size() != params[i].value.size()) {
      throw DimensionError("adam_step: size mismatch for " + params[i].name);
    }
    for (double g : grads[i]) {
      if (!std::isfinite(g)) {
        throw NumericError("non-finite gradient for parameter " + params[i].name);
      }
    }
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].value.mutable_values();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      w[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  }
}

double global_norm(const GradList& grads) {
  double sq = 0.0;
  for (const auto& g : grads)
    for (double x : g) sq += x * x;
  return std::sqrt(sq);
}

double clip_global_norm(GradList& grads, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_global_norm: max_norm must be > 0");
  const double norm = global_norm(grads);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (auto& g : grads)
      for (double& x : g) x *= factor;
  }
  return norm;
}

void polyak_update(std::vector<Param>& target, const std::vector<Param>& online,
                   double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ContractError("polyak_update: tau must be in (0, 1]");
  if (target.size() != online.size()) {
    throw DimensionError("polyak_update: parameter count mismatch");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (target[i].value.shape() != online[i].value.shape()) {
      throw DimensionError("polyak_update: shape mismatch for " + target[i].name);
    }
    auto t = target[i].value.mutable_values();
    const auto o = online[i].value.values();
    if (tau == 1.0) {
      std::copy(o.begin(), o.end(), t.begin());
      continue;
    }
    for (std::size_t j = 0; j < t.size(); ++j) t[j] = (1.0 - tau) * t[j] + tau * o[j];
  }
}

}  // namespace alm
