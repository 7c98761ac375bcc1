#pragma once

#include <stdexcept>
#include <string>

namespace elsa {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// File and format errors.
class IoError : public Error {
 public:
  using Error::Error;
};

class MissingFileError : public IoError {
 public:
  using IoError::IoError;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// Numeric / structural errors.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class MismatchError : public Error {
 public:
  using Error::Error;
};

class CapacityError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

/// Constant signal column; carries the offending column index.
class DegenerateColumnError : public Error {
 public:
  DegenerateColumnError(const std::string& msg, int column)
      : Error(msg), column_(column) {}
  int column() const { return column_; }

 private:
  int column_;
};

class DegenerateMomentError : public Error {
 public:
  using Error::Error;
};

/// Iteration cap hit with the gradient still above tolerance; carries the
/// partial diagnostics a caller needs to decide whether to keep the fit.
class NonConvergenceError : public Error {
 public:
  NonConvergenceError(const std::string& msg, int iterations,
                      double max_moment_gap, double moment_correlation)
      : Error(msg),
        iterations_(iterations),
        max_moment_gap_(max_moment_gap),
        moment_correlation_(moment_correlation) {}
  int iterations() const { return iterations_; }
  double max_moment_gap() const { return max_moment_gap_; }
  double moment_correlation() const { return moment_correlation_; }

 private:
  int iterations_;
  double max_moment_gap_;
  double moment_correlation_;
};

class EmptyExtremaError : public Error {
 public:
  using Error::Error;
};

class EmptySampleError : public Error {
 public:
  using Error::Error;
};

class EmptyGroupError : public Error {
 public:
  using Error::Error;
};

class DegenerateDataError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

/// A pipeline stage was invoked before its required intermediates exist.
class MissingIntermediateError : public Error {
 public:
  using Error::Error;
};

/// Every subject's model fit was rejected; downstream stages have no input.
class AllFitsRejectedError : public Error {
 public:
  using Error::Error;
};

}  // namespace elsa
