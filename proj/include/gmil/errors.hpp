#pragma once

#include <stdexcept>
#include <string>

namespace gmil {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand dimensions do not conform.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Input is well-formed but numerically degenerate (e.g. a zero-norm vector).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A documented precondition of a call was violated.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Malformed file content; messages carry a line number or bag id.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values appeared during optimization.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// A training split lacks one of the classes.
class StratificationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace gmil
