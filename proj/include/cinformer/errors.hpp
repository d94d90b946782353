#pragma once

#include <stdexcept>
#include <string>

namespace cinformer {

// Each error family maps onto one CLI exit code (see exit_code_for).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

// 0 success, 1 usage/config, 2 data/format, 3 numeric failure.
inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e) != nullptr) return 3;
  if (dynamic_cast<const UsageError*>(&e) != nullptr ||
      dynamic_cast<const ConfigError*>(&e) != nullptr) {
    return 1;
  }
  return 2;
}

}  // namespace cinformer
