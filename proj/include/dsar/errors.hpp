#pragma once

#include <stdexcept>
#include <string>

namespace dsar {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes or lengths that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid user configuration (worker counts, option values, config files).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A data-generating model whose parameters are not admissible.
class ModelError : public Error {
 public:
  using Error::Error;
};

/// Malformed or missing input files.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Iterative solver failed to converge.
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Master-side combination failed, typically a singular pooled Hessian.
class AggregationError : public Error {
 public:
  AggregationError(const std::string& what, int worker_id = -1)
      : Error(what), worker_id_(worker_id) {}

  /// Worker responsible for the failure, or -1 when it is a master-side issue.
  int worker_id() const noexcept { return worker_id_; }

 private:
  int worker_id_;
};

/// Inconsistent payloads received by the master (wrong sizes, projector
/// fingerprints that do not match).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Inference produced an unusable covariance estimate.
class InferenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace dsar
