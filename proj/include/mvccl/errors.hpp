#pragma once

#include <stdexcept>
#include <string>

namespace mvccl {

/// Shape or extent mismatch between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// API misuse (non-scalar loss passed to backward, mutating a recorded tensor, ...).
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Invalid model, training or run configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf produced or consumed by a numerical routine.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (manifest rows, label conflicts, empty images).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Filesystem failures; the message names the offending path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A metric was requested on a set where it is undefined (e.g. single class).
class UndefinedMetricError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// The finite-difference oracle cannot be trusted (objective not deterministic).
class OracleInvalidError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mvccl
