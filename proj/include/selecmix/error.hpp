#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace selecmix {

enum class ErrorKind {
  ZeroRow,
  ShapeMismatch,
  NonFinite,
  InvalidConfig,
  IoError,
  FormatError,
  InvalidQ,
  InvalidTau,
  NoPositives,
  EmptyCandidateSet,
  BatchTooSmall,
  BackendUnavailable,
  Diverged,
  EmptySubset,
  EmptyLog,
  EmptyCategory,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library carries one of the kinds above so
/// callers (the CLI in particular) can map it to an exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace selecmix
