#pragma once

#include <random>

#include "alm/diffmath/tensor.hpp"

namespace alm {

using Rng = std::mt19937_64;

// Independent N(0, 1) draws in row-major order.
inline Tensor standard_normal(Shape shape, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = normal(rng);
  return Tensor(std::move(shape), std::move(v));
}

inline Tensor uniform(Shape shape, double lo, double hi, Rng& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = u(rng);
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace alm
