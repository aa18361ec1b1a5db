#pragma once

#include <stdexcept>
#include <string>

namespace condseg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor extents or widths do not agree. The message names the offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument, configuration or record (CLI exit code 2).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf reached a loss or an op output (CLI exit code 3).
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or version-mismatched file.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace condseg
