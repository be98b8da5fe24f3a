#pragma once

#include <stdexcept>
#include <string>

namespace nodegam {

// Thrown when a fitted/annealed precondition is not met (e.g. extracting
// shapes from a model whose temperature schedule has not finished).
class invalid_state_error : public std::logic_error {
 public:
  explicit invalid_state_error(const std::string& what) : std::logic_error(what) {}
};

// Input data or schema problems: unknown columns, bad dtypes, malformed CSV.
class schema_error : public std::runtime_error {
 public:
  explicit schema_error(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finite arithmetic is required (diverged training,
// NaN gradients, bad user input).
class numeric_error : public std::runtime_error {
 public:
  explicit numeric_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace nodegam
