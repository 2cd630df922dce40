#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gprn {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad caller input: wrong dimensions, non-finite values, invalid parameters.
class InputError : public Error {
 public:
  using Error::Error;
};

/// Text that could not be parsed (kernel strings, CSV cells, config files).
class ParseError : public InputError {
 public:
  explicit ParseError(const std::string& msg, std::size_t line = 0)
      : InputError(line ? msg + " (line " + std::to_string(line) + ")" : msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Every rung of the jitter ladder failed to produce a Cholesky factor.
class SingularMatrixError : public Error {
 public:
  using Error::Error;
};

/// A moment or objective turned non-finite during inference.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// An elliptical slice step exhausted its bracket-shrink budget.
class StepFailure : public Error {
 public:
  using Error::Error;
};

/// All restarts (or all candidate fits) failed.
class FitFailure : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace gprn
