#pragma once

#include <stdexcept>
#include <string>

namespace popinterp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A mean or variance that does not exist (heavy Pareto tail).
class MomentUndefinedError : public Error {
 public:
  using Error::Error;
};

/// quantile(1) requested on a density with unbounded support.
class UnboundedQuantileError : public Error {
 public:
  using Error::Error;
};

/// Inverted-quantile plug-in with a zero bin estimate.
class DegeneratePlugInError : public Error {
 public:
  using Error::Error;
};

/// Width-based density approximation requested on the unbounded bin.
class UnsupportedApproximationError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data: bad CSV rows, non-contiguous bins, mismatched totals.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// The sampler could not find a finite starting point.
class InitializationError : public Error {
 public:
  using Error::Error;
};

/// Not enough draws or chains for a convergence diagnostic.
class DiagnosticError : public Error {
 public:
  using Error::Error;
};

/// A feature that does not exist for the given population (e.g. the Gini
/// coefficient of an all-zero population).
class UndefinedFeatureError : public Error {
 public:
  using Error::Error;
};

/// Input carries no information (e.g. every bin estimate is zero).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// File system failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace popinterp
