#pragma once

#include <stdexcept>
#include <string>

namespace xfe {

// Violated precondition or misuse of an API (bad shapes, bad indices).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Invalid or inconsistent configuration. CLI exit code 1.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data (files, projections). CLI exit code 2.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A truncated or malformed binary file. Carries the byte offset of the failure.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : DataError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// NaN/Inf produced during computation. CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Foreground mask of a view came out empty.
class NoForegroundError : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace xfe
