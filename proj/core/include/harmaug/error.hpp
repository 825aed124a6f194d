#pragma once

#include <stdexcept>
#include <string>

namespace harmaug {

/// Base class of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input data: bad JSONL records, invalid field values.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition violated by the caller.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace harmaug
