#pragma once

#include <stdexcept>
#include <string>

namespace gploo {

enum class ErrorKind {
  InvalidInput,
  NotPositiveDefinite,
  NumericalFailure,
  UnsupportedOperation,
  NonConvergence,
  CavityFailure,
  DegenerateModel,
};

const char* to_string(ErrorKind kind);

/// Every failure raised by the library carries a kind so callers (and the CLI
/// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace gploo
