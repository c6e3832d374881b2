#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "alm/diffmath/tensor.hpp"

namespace alm {

struct Param {
  std::string name;
  Tensor value;  // always untracked
};

using GradList = std::vector<std::vector<double>>;

struct AdamState {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::int64_t step = 0;
  GradList first_moment;
  GradList second_moment;

  AdamState() = default;
  AdamState(const std::vector<Param>& params, double lr);
};

/// Bias-corrected Adam update of `params` in place. Throws NumericError naming
/// the first parameter whose gradient holds NaN or Inf; nothing is modified in
/// that case.
void adam_step(AdamState& state, std::vector<Param>& params, const GradList& grads);

/// L2 norm over all concatenated gradients.
double global_norm(const GradList& grads);

/// Rescales every gradient by max_norm/norm when the global norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_global_norm(GradList& grads, double max_norm);

/// target <- (1 - tau) * target + tau * online, elementwise.
void polyak_update(std::vector<Param>& target, const std::vector<Param>& online,
                   double tau);

}  // namespace alm
