#pragma once

#include <stdexcept>
#include <string>

namespace mmcoref {

// Every failure the library raises derives from Error so callers (the CLI in
// particular) can map categories onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input data is well-formed but inconsistent (dangling ids, bad relations).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Index or id not present in a table, vocabulary or feature bank.
class LookupError : public Error {
 public:
  using Error::Error;
};

/// Malformed file contents.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace mmcoref
