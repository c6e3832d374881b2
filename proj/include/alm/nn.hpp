#pragma once

#include <string>
#include <vector>

#include "alm/diffmath/optim.hpp"
#include "alm/random.hpp"

namespace alm {

/// Fully connected ELU network. With `layer_norm` the first hidden layer is
/// normalised before its activation. Parameters are stored as
/// [w0, b0, (ln_gain, ln_bias), w1, b1, ...].
class Mlp {
 public:
  enum class FinalInit { kOrthogonal, kZero };

  Mlp() = default;
  Mlp(std::string name, std::vector<std::size_t> sizes, bool layer_norm, FinalInit final_init,
      Rng& rng);

  const std::string& name() const { return name_; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  bool layer_norm() const { return layer_norm_; }

  std::vector<Param>& params() { return params_; }
  const std::vector<Param>& params() const { return params_; }

  /// Parameter tensors for one forward pass: tape leaves when `tape` is given,
  /// otherwise the raw untracked values (no gradient flows into them).
  std::vector<Tensor> bind(Tape* tape) const;

  Tensor forward(const std::vector<Tensor>& weights, const Tensor& x) const;
  Tensor forward(const Tensor& x) const { return forward(bind(nullptr), x); }

 private:
  std::string name_;
  std::vector<std::size_t> sizes_;
  bool layer_norm_ = false;
  std::vector<Param> params_;
};

/// Orthogonal [rows x cols] matrix scaled by `gain` (semi-orthogonal when not
/// square).
std::vector<double> orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng);

}  // namespace alm
