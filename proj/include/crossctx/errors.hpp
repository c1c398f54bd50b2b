#pragma once

#include <stdexcept>
#include <string>

namespace crossctx {

// Three failure families, each mapped to its own CLI exit code.

/// Invalid user configuration or precondition on call arguments.
class ConfigError : public std::invalid_argument {
 public:
  explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Malformed, missing or inconsistent data (files, trials, dimensions).
class DataError : public std::runtime_error {
 public:
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite values or solver failure during a computation.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace crossctx
