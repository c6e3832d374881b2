#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace alm {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

class Tape;

/// Dense row-major f64 array. Values are immutable and shared between copies;
/// a tensor created by an op whose inputs live on a tape is itself recorded on
/// that tape and can receive gradient.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, double v);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_->size(); }
  std::size_t dim(std::size_t axis) const;
  // Rows/cols of a rank-2 tensor; rank-1 is treated as a single row.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return *data_; }
  const double* data() const { return data_->data(); }
  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * cols() + c]; }
  double item() const;

  // Copy-on-write access for in-place parameter updates. Only valid on an
  // untracked tensor.
  std::span<double> mutable_values();

  bool tracked() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  /// Same values, no tape membership: gradients never flow through the copy.
  Tensor detach() const;

 private:
  friend class Tape;
  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  Tape* tape_ = nullptr;
  int node_ = -1;
};

/// Result of Tape::backward: one gradient buffer per tape node.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<std::vector<double>> slots,
                     std::vector<std::size_t> sizes, const Tape* tape);

  // Gradient with respect to a tracked tensor; zeros if the loss does not
  // depend on it.
  std::vector<double> wrt(const Tensor& t) const;

 private:
  std::vector<std::vector<double>> slots_;
  std::vector<std::size_t> sizes_;
  const Tape* tape_ = nullptr;
};

/// Append-only record of a define-by-run computation. Nodes are appended as
/// ops execute, so every node's parents precede it.
class Tape {
 public:
  using BackwardFn = std::function<void(std::span<const double> grad_out,
                                        Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Tracked leaf sharing `value`'s storage.
  Tensor leaf(const Tensor& value);

  /// Reverse sweep from a scalar loss. Throws ContractError if the loss is
  /// not a scalar recorded on this tape.
  Gradients backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

  // Op-author interface. `record` wraps `out` as a node on this tape whose
  // backward distributes grad_out into parents via accumulate().
  Tensor record(Tensor out, std::vector<int> parents, BackwardFn backward);
  // Gradient accumulator of `node` during backward.
  std::span<double> grad_slot(int node);

 private:
  struct Node {
    std::vector<int> parents;
    BackwardFn backward;
    std::size_t size = 0;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
};

/// The tape shared by the tracked tensors among `inputs`, or nullptr if none is
/// tracked. Throws ContractError if two different tapes are mixed.
Tape* common_tape(std::initializer_list<const Tensor*> inputs);

}  // namespace alm
