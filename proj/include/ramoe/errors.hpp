#pragma once

#include <stdexcept>
#include <string>

namespace ramoe {

// Usage problems: bad flags, unknown config keys, malformed command lines.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Data problems: shape mismatches, bad labels, malformed files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Numerical failures: an operation produced a non-finite value.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ramoe
