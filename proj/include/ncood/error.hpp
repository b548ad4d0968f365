#pragma once

#include <stdexcept>
#include <string>

namespace ncood {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto distinct exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid hyperparameters, generator parameters or run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes that do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed dataset file, checkpoint or other serialized input.
class FormatError : public Error {
 public:
  using Error::Error;
};

// File system failures (missing files, unwritable paths).
class IoError : public Error {
 public:
  using Error::Error;
};

// Degenerate numeric input (zero covariance, rank-0 weights, ...).
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse that violates a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace ncood
