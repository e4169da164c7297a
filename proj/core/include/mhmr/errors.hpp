#pragma once

#include <stdexcept>
#include <string>

namespace mhmr {

// Malformed, truncated or incompatible files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shape or dimension mismatch.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace mhmr
