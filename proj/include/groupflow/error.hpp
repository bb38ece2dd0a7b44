#pragma once

#include <stdexcept>
#include <string>

namespace groupflow {

enum class ErrorKind {
  InvalidArgument,
  DimensionMismatch,
  LogDomain,
  NonFinite,
  InputNotFound,
  Format,
  Truncated,
  Checksum,
  Unsupported,
  Io,
};

const char* to_string(ErrorKind kind);

/// Exception type for every recoverable failure in the library. The kind is
/// stable and is what the CLI reports in its machine-readable error output.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace groupflow
