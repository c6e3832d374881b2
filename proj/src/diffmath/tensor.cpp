#include "alm/diffmath/tensor.hpp"

#include <numeric>
#include <sstream>

#include "alm/error.hpp"

namespace alm {

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

Tensor::Tensor() : data_(std::make_shared<std::vector<double>>(1, 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (shape_size(shape_) != data_->size()) {
    throw DimensionError("tensor shape " + shape_string(shape_) + " holds " +
                         std::to_string(shape_size(shape_)) +
                         " values, got " + std::to_string(data_->size()));
  }
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0); }

Tensor Tensor::filled(Shape shape, double v) {
  const std::size_t n = shape_size(shape);
  return Tensor(std::move(shape), std::vector<double>(n, v));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError("axis " + std::to_string(axis) +
                         " out of range for shape " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  if (rank() == 2) return shape_[0];
  return 1;
}

std::size_t Tensor::cols() const {
  if (rank() == 2) return shape_[1];
  if (rank() == 1) return shape_[0];
  return 1;
}

double Tensor::item() const {
  if (size() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_string(shape_));
  }
  return (*data_)[0];
}

std::span<double> Tensor::mutable_values() {
  if (tracked()) throw ContractError("in-place write to a tracked tensor");
  if (data_.use_count() > 1) {
    data_ = std::make_shared<std::vector<double>>(*data_);
  }
  return *data_;
}

Tensor Tensor::detach() const {
  Tensor out = *this;
  out.tape_ = nullptr;
  out.node_ = -1;
  return out;
}

Gradients::Gradients(std::vector<std::vector<double>> slots,
                     std::vector<std::size_t> sizes, const Tape* tape)
    : slots_(std::move(slots)), sizes_(std::move(sizes)), tape_(tape) {}

std::vector<double> Gradients::wrt(const Tensor& t) const {
  if (!t.tracked() || t.tape() != tape_) {
    return std::vector<double>(t.size(), 0.0);
  }
  const auto& slot = slots_[static_cast<std::size_t>(t.node())];
  if (slot.empty()) return std::vector<double>(t.size(), 0.0);
  return slot;
}

Tensor Tape::leaf(const Tensor& value) {
  Tensor out = value.detach();
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{{}, nullptr, value.size()});
  return out;
}

Tensor Tape::record(Tensor out, std::vector<int> parents, BackwardFn backward) {
  out.tape_ = this;
  out.node_ = static_cast<int>(nodes_.size());
  nodes_.push_back(Node{std::move(parents), std::move(backward), out.size()});
  return out;
}

std::span<double> Tape::grad_slot(int node) {
  auto& slot = grads_[static_cast<std::size_t>(node)];
  if (slot.empty()) slot.assign(nodes_[static_cast<std::size_t>(node)].size, 0.0);
  return slot;
}

Gradients Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) {
    throw ContractError("backward: loss is not recorded on this tape");
  }
  if (loss.size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.shape()));
  }
  grads_.assign(nodes_.size(), {});
  grad_slot(loss.node())[0] = 1.0;
  for (int i = loss.node(); i >= 0; --i) {
    const auto idx = static_cast<std::size_t>(i);
    if (grads_[idx].empty() || !nodes_[idx].backward) continue;
    // Parents precede the node, so its own slot is never touched here.
    std::vector<double> gout = std::move(grads_[idx]);
    nodes_[idx].backward(gout, *this);
    grads_[idx] = std::move(gout);
  }
  std::vector<std::size_t> sizes;
  sizes.reserve(nodes_.size());
  for (const auto& n : nodes_) sizes.push_back(n.size);
  return Gradients(std::move(grads_), std::move(sizes), this);
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
  Tape* tape = nullptr;
  for (const Tensor* t : inputs) {
    if (!t->tracked()) continue;
    if (tape != nullptr && t->tape() != tape) {
      throw ContractError("operands recorded on different tapes");
    }
    tape = t->tape();
  }
  return tape;
}

}  // namespace alm
