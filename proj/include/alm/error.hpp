#pragma once

#include <stdexcept>
#include <string>

namespace alm {

// Shape or dimension mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Input outside the mathematical domain of an operation (log of <= 0, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// Violated precondition of an API call.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// NaN/Inf detected in a loss or gradient.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// No valid sequence window available in the replay buffer.
class EmptyBufferError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace alm
