#pragma once

#include <stdexcept>
#include <string>

namespace regnet {

// Bad shapes, divisibility violations, malformed specs.
struct InvalidArgument : std::invalid_argument {
  explicit InvalidArgument(const std::string& msg) : std::invalid_argument(msg) {}
};

// API misuse: backward before forward, double backward, etc.
struct StateError : std::logic_error {
  explicit StateError(const std::string& msg) : std::logic_error(msg) {}
};

// NaN/Inf escaped an operation.
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dataset / checkpoint / feature-dump I/O failures.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace regnet
