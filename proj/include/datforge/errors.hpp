#pragma once

#include <stdexcept>
#include <string>

namespace datforge {

// Error taxonomy. ConfigError is the only one the CLI maps to exit code 2;
// everything else is a runtime failure (exit 3).

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// A value lies outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ArgumentError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed on-disk data (WAV, checkpoint).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Access that the training protocol forbids, e.g. reading target-split
/// class labels outside the oracle stage.
class PolicyError : public Error {
 public:
  using Error::Error;
};

}  // namespace datforge
