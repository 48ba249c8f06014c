#pragma once

#include <stdexcept>
#include <string>

namespace dpn {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible extents between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid layer, model or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Lookup outside a table's row range.
class IndexError : public Error {
 public:
  using Error::Error;
};

/// API misuse (e.g. backward from a non-scalar).
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or incompatible checkpoint file.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the given input (e.g. AUC on a single class).
class MetricError : public Error {
 public:
  using Error::Error;
};

/// Training loss became non-finite; parameters were rolled back.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpn
