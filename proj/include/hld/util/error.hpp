// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hld {

enum class ErrorCode {
  ShapeMismatch,
  NonFinite,
  NotScalar,
  EmptySequence,
  InvalidLabel,
  InvalidConfig,
  InsufficientFrames,
  IoError,
  FormatError,
  NoQuietSegment,
  NoValidTriplets,
  EmptyDataset,
  MissingAnchors,
  VariantInputMismatch,
  TooFewSessions,
  LengthMismatch,
  Undefined,
  TooFewSubjects,
  ConstantInput,
  TooFewPoints,
  TooFewSamples,
  TrainingFailure,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hld
