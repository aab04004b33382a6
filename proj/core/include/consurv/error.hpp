#pragma once

#include <stdexcept>
#include <string>

namespace consurv {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not line up.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// NaN, infinity or an out-of-domain argument reached a numeric kernel.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file or dataset content.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration value. `field()` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace consurv
