#pragma once

#include <stdexcept>
#include <string>

namespace ented {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or invalid input data (files, tensors, index sets).
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or argument combination.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Factorization failure or non-finite objective.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace ented
