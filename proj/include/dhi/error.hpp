#pragma once

#include <stdexcept>
#include <string>

namespace dhi {

// Base of every error the library throws. The category decides the CLI exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid arguments, shapes or configuration values.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Missing or malformed files and datasets.
class DataError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf produced or detected during computation.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace dhi
