#pragma once

#include <stdexcept>
#include <string>

namespace xvmunet {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or extent disagreement between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid model/run configuration (exit code 2).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or out-of-range input data (exit code 3).
class DataError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures (exit code 3).
class IoError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Caller broke an API precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Training diverged (exit code 4).
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace xvmunet
