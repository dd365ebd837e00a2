#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace caps_ood {

enum class ErrorCode {
  BadMagic,
  TruncatedFile,
  InvalidHeader,
  NonFinite,
  IoError,
  ParseError,
  MissingIdTrain,
  UnknownRole,
  MissingSplit,
  ShapeMismatch,
  EmptyDataset,
  NonFiniteLoss,
  MissingLabels,
  EmptyClass,
  ZeroNormCap,
  NegativeEntry,
  LengthMismatch,
  UnknownClass,
  EmptyInput,
  DimTooSmall,
  InvalidArgument,
  InvalidLabel,
};

// Coarse grouping used by the CLI to pick an exit code.
enum class ErrorKind { Usage, Data, Numerical };

std::string_view to_string(ErrorCode code);
ErrorKind kind_of(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  ErrorKind kind() const noexcept { return kind_of(code_); }

 private:
  ErrorCode code_;
};

}  // namespace caps_ood
