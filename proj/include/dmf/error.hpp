#pragma once

#include <stdexcept>
#include <string>

namespace dmf {

/// Base error for every failure raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

/// Raised when a value that must stay finite is NaN or infinite.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

}  // namespace dmf
