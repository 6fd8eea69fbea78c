#pragma once

#include <stdexcept>
#include <string>

namespace manyiv {

/// Base class for all errors thrown by the library.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (bad header, non-numeric cell, ragged row).
class ParseError : public Error {
public:
  using Error::Error;
};

/// Incompatible dimensions (n <= K, p mismatch, size disagreements).
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Instrument matrix is numerically rank deficient.
class RankError : public Error {
public:
  RankError(const std::string& what, long numerical_rank)
      : Error(what), rank_(numerical_rank) {}
  long numerical_rank() const noexcept { return rank_; }

private:
  long rank_;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
public:
  using Error::Error;
};

/// Iterative routine failed to bracket or converge.
class ConvergenceError : public Error {
public:
  using Error::Error;
};

/// A fitted quantity is numerically degenerate (zero residual variation,
/// ill-conditioned second-moment matrix).
class DegenerateFitError : public Error {
public:
  using Error::Error;
};

/// Requested case is outside what the available theory supports.
class UnsupportedError : public Error {
public:
  using Error::Error;
};

/// Quantity is undefined for the given inputs (0/0 situations).
class SingularityError : public Error {
public:
  using Error::Error;
};

/// Calibration constraint cannot be met anywhere in the search range.
class InfeasibleError : public Error {
public:
  using Error::Error;
};

}  // namespace manyiv
