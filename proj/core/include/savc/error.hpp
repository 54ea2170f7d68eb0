#pragma once

#include <stdexcept>
#include <string>

namespace savc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed bytes on disk (bad magic, truncation, unsupported dtype).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Filesystem failures: unreadable/unwritable paths.
class IoError : public Error {
 public:
  using Error::Error;
};

// Inputs that parse but violate a contract (shapes, labels, stage order).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class StageError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace savc
