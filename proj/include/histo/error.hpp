#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace histo {

// Base of every error the library raises. The CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or argument values (odd kernel, bad divisibility, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Index out of range or not a permutation.
class IndexError : public Error {
 public:
  using Error::Error;
};

// NaN / Inf where finite values are required, or a failed numeric check.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Operation called in the wrong state (backward without forward, ...).
class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; carries the byte offset where parsing failed.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

}  // namespace histo
