#pragma once

// Differentiable tensor ops. Binary elementwise ops accept equal shapes or a
// rank-0 operand broadcast against the other; anything else is a
// DimensionError. Outputs are recorded on the operands' tape when at least one
// operand is tracked.

#include <optional>
#include <vector>

#include "alm/diffmath/tensor.hpp"

namespace alm {

// [m x k] * [k x n]
Tensor matmul(const Tensor& a, const Tensor& b);
// x[batch x in] * w[in x out] + bias[out], bias added to every row.
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor negate(const Tensor& a);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor exp(const Tensor& a);
// DomainError on any non-positive entry.
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor elu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
// Gradient passes only where lo < a < hi.
Tensor clamp(const Tensor& a, double lo, double hi);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator-(const Tensor& a) { return negate(a); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator+(const Tensor& a, double c) { return add_scalar(a, c); }

// Full reduction yields a rank-0 tensor; an axis removes that dimension.
Tensor sum(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);
Tensor mean(const Tensor& t, std::optional<std::size_t> axis = std::nullopt);

inline constexpr double kLayerNormEpsilon = 1e-8;

// Per-row normalization of t[batch x d] followed by gain/bias[d].
Tensor layer_norm(const Tensor& t, const Tensor& gain, const Tensor& bias,
                  double epsilon = kLayerNormEpsilon);

// Column-wise concatenation of rank-2 tensors with equal row counts.
Tensor concat_cols(const std::vector<Tensor>& parts);
// Columns [begin, end) of a rank-2 tensor.
Tensor slice_cols(const Tensor& t, std::size_t begin, std::size_t end);
// Same values, new shape of equal size.
Tensor reshape(const Tensor& t, Shape shape);

}  // namespace alm
