// SPDX-License-Identifier: Apache-2.0
#include "hld/util/error.hpp"

namespace hld {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::NotScalar: return "NotScalar";
    case ErrorCode::EmptySequence: return "EmptySequence";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::InsufficientFrames: return "InsufficientFrames";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::NoQuietSegment: return "NoQuietSegment";
    case ErrorCode::NoValidTriplets: return "NoValidTriplets";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::MissingAnchors: return "MissingAnchors";
    case ErrorCode::VariantInputMismatch: return "VariantInputMismatch";
    case ErrorCode::TooFewSessions: return "TooFewSessions";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::Undefined: return "Undefined";
    case ErrorCode::TooFewSubjects: return "TooFewSubjects";
    case ErrorCode::ConstantInput: return "ConstantInput";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::TrainingFailure: return "TrainingFailure";
  }
  return "Unknown";
}

}  // namespace hld
