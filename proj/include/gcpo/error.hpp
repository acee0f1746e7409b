#pragma once

#include <stdexcept>
#include <string>

namespace gcpo {

/// Bad data handed to a library operation: invalid probability vector,
/// out-of-range token id, mismatched shapes, degenerate grids.
class ValidationError : public std::invalid_argument {
 public:
  explicit ValidationError(const std::string& what)
      : std::invalid_argument(what) {}
};

/// Bad run configuration: unknown key, out-of-range field, unparsable value.
/// Messages carry the dotted field path.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// File read/write failure. Messages carry the offending path.
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite loss or gradient mid-training; message holds a batch summary.
class TrainingAbort : public std::runtime_error {
 public:
  explicit TrainingAbort(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gcpo
