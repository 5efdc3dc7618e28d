#pragma once

#include <stdexcept>
#include <string>

namespace cxr {

// Coarse error categories. They double as the CLI exit codes and the C API
// status values, so the numeric values are part of the external contract.
enum class ErrorKind : int {
  kUsage = 2,
  kDataFormat = 3,
  kModelFormat = 4,
  kRuntime = 5,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Shape disagreement between operands. Reported as a runtime failure.
class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what)
      : Error(ErrorKind::kRuntime, "dimension error: " + what) {}
};

// Argument outside an operation's mathematical domain (log of x <= 0, ...).
class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what)
      : Error(ErrorKind::kRuntime, "domain error: " + what) {}
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what)
      : Error(ErrorKind::kUsage, what) {}
};

class DataFormatError : public Error {
 public:
  explicit DataFormatError(const std::string& what)
      : Error(ErrorKind::kDataFormat, what) {}
};

class ModelFormatError : public Error {
 public:
  explicit ModelFormatError(const std::string& what)
      : Error(ErrorKind::kModelFormat, what) {}
};

}  // namespace cxr
