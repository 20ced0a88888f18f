#pragma once

#include <stdexcept>

namespace rqr {

// Configuration and precondition violations use std::invalid_argument.
// These two distinguish runtime failure classes for exit-code mapping.

struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace rqr
