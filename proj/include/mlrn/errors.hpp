#pragma once

#include <stdexcept>
#include <string>

namespace mlrn {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor dimension mismatches (conv channel counts, add shapes, ...).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration values: bad strides, non-integral conv output,
// bad decision-rule parameters, misuse of the tape.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad input data: non-binary targets, dangling COCO references.
class ValidationError : public Error {
 public:
  using Error::Error;
};

// Malformed bytes: JSON documents, dataset bundles.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Well-formed JSON whose structure is wrong: missing arrays, wrong types.
class SchemaError : public ParseError {
 public:
  using ParseError::ParseError;
};

// Non-finite values where finite ones are required (training aborts).
class NumericError : public Error {
 public:
  using Error::Error;
};

// File-level failures.
class IoError : public Error {
 public:
  using Error::Error;
};

// Structural checkpoint problems; the message names the offending field.
class CheckpointError : public IoError {
 public:
  using IoError::IoError;
};

}  // namespace mlrn
