#pragma once

#include <stdexcept>
#include <string>

namespace duo {

// Every failure the library reports derives from Error. The CLI maps the
// concrete kind onto its exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor extents.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or geometry.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unreadable files.
class FormatError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced by a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse (non-scalar loss, double attachment, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

}  // namespace duo
