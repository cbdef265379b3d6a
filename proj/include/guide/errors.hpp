#pragma once

#include <stdexcept>
#include <string>

namespace guide {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text. Carries the 1-based line number when known.
class ParseError : public Error {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : Error(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Caller passed an argument outside the documented domain.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// A numerical kernel failed (rank deficiency, non-convergence, non-finite values).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// A partitioner could not produce a usable partition.
class SolverError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// An unlearning request is invalid against the current state.
class RequestError : public Error {
 public:
  using Error::Error;
};

/// Persisted state could not be loaded (checksum, truncation, version skew).
class LoadError : public Error {
 public:
  using Error::Error;
};

class VersionError : public LoadError {
 public:
  using LoadError::LoadError;
};

/// Internal bookkeeping disagrees with itself; indicates a stale record or a bug.
class ConsistencyError : public Error {
 public:
  using Error::Error;
};

}  // namespace guide
