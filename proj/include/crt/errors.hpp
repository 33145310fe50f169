#pragma once

#include <stdexcept>
#include <string>

namespace crt {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input is valid in shape but degenerate for the operation (zero vector,
/// empty class set, ...).
class DegenerateError : public Error {
 public:
  using Error::Error;
};

/// A value became NaN or infinite.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value or key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// File could not be read, written, or failed validation.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace crt
