#pragma once

#include <stdexcept>
#include <string>

namespace ghostprobe {

// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Value outside the domain an operation accepts (e.g. BCE input outside [0,1]).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

// API misuse, e.g. backward() on a non-scalar.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Malformed file or configuration.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EmptyCloudError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid scene or run specification.
class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A forward pass produced NaN/Inf.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ghostprobe
