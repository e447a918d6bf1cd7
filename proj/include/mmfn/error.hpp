#pragma once

#include <stdexcept>
#include <string>

namespace mmfn {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inconsistent dimensions or inputs that are not generators / probabilities.
class StructuralError : public Error {
 public:
  using Error::Error;
};

// A model that is well formed but violates one of the modelling assumptions.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// A caller-side precondition failed (unstable model, direction outside Corn,
// negative direction entries, ...).
class PreconditionError : public Error {
 public:
  using Error::Error;
};

// An iterative method did not reach its tolerance.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

// Model file could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmfn
