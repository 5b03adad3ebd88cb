#pragma once

#include <stdexcept>
#include <string>

namespace atlaspl {

/// Base of every error raised by the library. The CLI maps the concrete
/// type onto its exit code (data errors vs numerical failures).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data problems.
class FormatError : public Error {
 public:
  using Error::Error;
};

class UnsupportedShapeError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class BoundsError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EmptyStructureError : public Error {
 public:
  using Error::Error;
};

class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class InsufficientPoolError : public Error {
 public:
  using Error::Error;
};

class ManifestError : public Error {
 public:
  using Error::Error;
};

// Raised when an iterative estimator is required to converge and does not.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace atlaspl
