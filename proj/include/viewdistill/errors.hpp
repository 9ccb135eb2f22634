#pragma once

#include <stdexcept>
#include <string>

namespace viewdistill {

// Base class for all library errors. CLI maps Error -> exit 2,
// NumericError -> exit 3.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed or unreadable input (parse failures, missing files, bad refs).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Structurally valid input that violates a documented contract
// (non-orthonormal rotation, duplicate view id, dimension mismatch).
class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// Bad run configuration (impossible schedule, out-of-range parameter).
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Geometry that admits no well-defined answer (zero-norm direction,
// coincident points where a direction is required).
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& msg) : Error(msg) {}
};

// A random draw has no admissible outcome (e.g. no eligible keystep to
// sample a negative from). Callers usually recover by dropping the
// sample rather than failing the run.
class SamplingError : public Error {
 public:
  explicit SamplingError(const std::string& msg) : Error(msg) {}
};

// Non-finite values or collapsed quantities produced at run time.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace viewdistill
