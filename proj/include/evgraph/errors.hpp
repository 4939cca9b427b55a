#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace evg {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data (bad record length, unparsable line).
class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what, std::size_t line = 0)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A value outside its declared domain (pixel outside the sensor, ...).
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Tensor or layer shapes that do not chain.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration key or value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Missing or unusable dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace evg
