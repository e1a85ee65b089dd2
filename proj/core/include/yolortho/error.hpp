#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace yolortho {

enum class ErrorKind {
  MalformedFile,
  UnknownCategory,
  TierMismatch,
  ConflictingFDI,
  DegenerateTransform,
  ShapeMismatch,
  InvalidTier,
  EmptyDataset,
  NonFiniteLoss,
  NonFiniteCost,
  MissingAssignedLabels,
  InvalidConfig,
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorKind kind) noexcept;

// Every failure surfaced by the library carries a machine-readable kind so
// the CLI can report it on a single line.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace yolortho
