#pragma once

#include <stdexcept>
#include <string>

namespace seqdistill {

// Base class for all library errors.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Incompatible tensor/vector dimensions. Messages name the offending shapes.
class ShapeError : public Error {
  public:
    using Error::Error;
};

// Argument outside the operation's domain (bad temperature, ratio, index...).
class DomainError : public Error {
  public:
    using Error::Error;
};

// Non-finite values where finite ones are required.
class NumericError : public Error {
  public:
    using Error::Error;
};

// Operation called in a state that cannot support it (e.g. backward without
// a training-mode trace).
class StateError : public Error {
  public:
    using Error::Error;
};

// Text input that cannot be tokenized/decoded. Messages carry the line number.
class ParseError : public Error {
  public:
    using Error::Error;
};

// Well-formed input whose values violate a contract (e.g. a probability row
// that does not sum to one).
class ValidationError : public Error {
  public:
    using Error::Error;
};

// Binary container violations: bad magic, unsupported version, truncation.
class FormatError : public Error {
  public:
    using Error::Error;
};

// Dataset-level inconsistencies (missing posterior for an image, label out
// of range...).
class DataError : public Error {
  public:
    using Error::Error;
};

// Train/test partitioning cannot satisfy its contract.
class SplitError : public Error {
  public:
    using Error::Error;
};

// Filesystem failures (missing file, unwritable path).
class IoError : public Error {
  public:
    using Error::Error;
};

} // namespace seqdistill
