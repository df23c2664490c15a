#pragma once

#include <stdexcept>
#include <string>

namespace pmt {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or ranks.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN or Inf produced by an operation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Malformed or foreign file (bad magic, truncation, checksum, version).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value; the message names the offending key.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A runtime contract was violated (e.g. buffer underflow in the scheduler).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace pmt
