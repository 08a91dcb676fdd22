#pragma once

#include <stdexcept>
#include <string>

namespace sdscl {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch between operands.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Value outside an operation's mathematical domain (e.g. log of a non-positive number).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument that is not a shape problem.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Operation invoked in a state that does not support it.
class StateError : public Error {
 public:
  using Error::Error;
};

/// Input whose geometry makes the result undefined (zero-norm vectors).
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

/// A function under numerical check produced non-finite output.
class EvaluationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class SelectionError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdscl
