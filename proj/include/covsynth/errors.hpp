#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace covsynth {

// Malformed kernel tree: missing node, missing child, wrong arity.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values or a covariance matrix that stays indefinite after jitter.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& what, std::vector<double> jitter_levels = {})
      : std::runtime_error(what), jitter_levels_(std::move(jitter_levels)) {}

  const std::vector<double>& jitter_levels() const noexcept { return jitter_levels_; }

 private:
  std::vector<double> jitter_levels_;
};

// Gradient move requested on a tree that contains a non-differentiable operator.
class UnsupportedMove : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace covsynth
