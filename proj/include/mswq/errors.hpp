#pragma once

#include <stdexcept>
#include <string>

namespace mswq {

/// Malformed input, inconsistent topology, bad configuration, CFL violations. CLI exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Singular systems, non-finite states, solver failures. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requests for reaction models or methods the framework does not implement. CLI exit code 4.
class OutOfScopeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mswq
