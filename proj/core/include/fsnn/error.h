#pragma once

#include <stdexcept>
#include <string>

namespace fsnn {

// Raised when inputs violate a documented precondition (bad config values,
// malformed files, shape mismatches). CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// Raised when an optimization run diverges (loss blown past its abort
// threshold or became non-finite). CLI maps this to exit code 1.
class DivergenceError : public std::runtime_error {
 public:
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fsnn
