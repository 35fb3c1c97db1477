#include "pseudoseg/errors.hpp"

namespace pseudoseg {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::MalformedManifest: return "MalformedManifest";
    case ErrorCode::DuplicateId: return "DuplicateId";
    case ErrorCode::DecodeError: return "DecodeError";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::BadFractions: return "BadFractions";
    case ErrorCode::ImportShapeMismatch: return "ImportShapeMismatch";
    case ErrorCode::UnknownLayer: return "UnknownLayer";
    case ErrorCode::UnlabeledSample: return "UnlabeledSample";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::BadTarget: return "BadTarget";
    case ErrorCode::EmptyMap: return "EmptyMap";
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::BadN: return "BadN";
    case ErrorCode::MissingRecord: return "MissingRecord";
    case ErrorCode::MissingMask: return "MissingMask";
    case ErrorCode::CheckpointError: return "CheckpointError";
  }
  return "Unknown";
}

}  // namespace pseudoseg
