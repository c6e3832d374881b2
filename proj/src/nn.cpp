#include "alm/nn.hpp"

#include <Eigen/Dense>

#include "alm/diffmath/ops.hpp"
#include "alm/error.hpp"

namespace alm {

std::vector<double> orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  const auto big = static_cast<Eigen::Index>(std::max(rows, cols));
  const auto small = static_cast<Eigen::Index>(std::min(rows, cols));
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd g(big, small);
  for (Eigen::Index c = 0; c < small; ++c)
    for (Eigen::Index r = 0; r < big; ++r) g(r, c) = normal(rng);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(big, small);
  // Sign fix so the draw is uniform over the orthogonal group.
  const Eigen::MatrixXd r = qr.matrixQR();
  for (Eigen::Index c = 0; c < small; ++c) {
    if (r(c, c) < 0) q.col(c) *= -1.0;
  }
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = rows >= cols ? q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))
                                    : q(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i));
      out[i * cols + j] = gain * v;
    }
  }
  return out;
}

Mlp::Mlp(std::string name, std::vector<std::size_t> sizes, bool layer_norm, FinalInit final_init,
         Rng& rng)
    : name_(std::move(name)), sizes_(std::move(sizes)), layer_norm_(layer_norm) {
  if (sizes_.size() < 2) throw ContractError(name_ + ": need input and output sizes");
  if (layer_norm_ && sizes_.size() < 3) throw ContractError(name_ + ": layer norm needs a hidden layer");
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const std::size_t in = sizes_[l], out = sizes_[l + 1];
    const bool last = l + 2 == sizes_.size();
    std::vector<double> w = last && final_init == FinalInit::kZero
                                ? std::vector<double>(in * out, 0.0)
                                : orthogonal_init(in, out, 1.0, rng);
    const std::string idx = std::to_string(l);
    params_.push_back({name_ + ".w" + idx, Tensor::matrix(in, out, std::move(w))});
    params_.push_back({name_ + ".b" + idx, Tensor::zeros({out})});
    if (l == 0 && layer_norm_) {
      params_.push_back({name_ + ".ln_gain", Tensor::filled({out}, 1.0)});
      params_.push_back({name_ + ".ln_bias", Tensor::zeros({out})});
    }
  }
}

std::vector<Tensor> Mlp::bind(Tape* tape) const {
  std::vector<Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(tape ? tape->leaf(p.value) : p.value);
  return out;
}

Tensor Mlp::forward(const std::vector<Tensor>& weights, const Tensor& x) const {
  if (weights.size() != params_.size()) throw ContractError(name_ + ": weight list size mismatch");
  if (x.rank() != 2 || x.cols() != sizes_.front()) {
    throw DimensionError(name_ + ": input " + shape_string(x.shape()) + ", expected [batch x " +
                         std::to_string(sizes_.front()) + "]");
  }
  Tensor h = x;
  std::size_t p = 0;
  const std::size_t layers = sizes_.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    h = affine(h, weights[p], weights[p + 1]);
    p += 2;
    if (l == 0 && layer_norm_) {
      h = alm::layer_norm(h, weights[p], weights[p + 1]);
      p += 2;
    }
    if (l + 1 < layers) h = elu(h);
  }
  return h;
}

}  // namespace alm
