#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pseudoseg {

enum class ErrorCode {
  MissingFile,
  MalformedManifest,
  DuplicateId,
  DecodeError,
  ShapeMismatch,
  IoError,
  BadFractions,
  ImportShapeMismatch,
  UnknownLayer,
  UnlabeledSample,
  EmptyDataset,
  NonFiniteGradient,
  BadTarget,
  EmptyMap,
  MissingLabel,
  BadConfig,
  BadN,
  MissingRecord,
  MissingMask,
  CheckpointError,
};

std::string_view to_string(ErrorCode code);

// Every failure in the library surfaces as this exception; `code()` is the
// machine-readable kind that the CLI writes into its error record.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pseudoseg
