#pragma once

#include <stdexcept>
#include <string>

namespace cgiqa {

// Every error raised by the library derives from Error so callers can map
// the category to an exit code or an HTTP status.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-conformable tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model, protocol or service configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data violates a documented precondition (range, grid, counts).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// File or network I/O failure, including malformed files.
class IoError : public Error {
 public:
  using Error::Error;
};

// A statistic is undefined for the given data (e.g. zero variance).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

// A named session, stimulus or rater does not exist.
class NotFoundError : public Error {
 public:
  using Error::Error;
};

// The request clashes with existing state (duplicate id, rater not enrolled).
class ConflictError : public Error {
 public:
  using Error::Error;
};

}  // namespace cgiqa
