#include "caps_ood/error.hpp"

namespace caps_ood {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::TruncatedFile: return "TruncatedFile";
    case ErrorCode::InvalidHeader: return "InvalidHeader";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::MissingIdTrain: return "MissingIdTrain";
    case ErrorCode::UnknownRole: return "UnknownRole";
    case ErrorCode::MissingSplit: return "MissingSplit";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::EmptyDataset: return "EmptyDataset";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::MissingLabels: return "MissingLabels";
    case ErrorCode::EmptyClass: return "EmptyClass";
    case ErrorCode::ZeroNormCap: return "ZeroNormCap";
    case ErrorCode::NegativeEntry: return "NegativeEntry";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::UnknownClass: return "UnknownClass";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::DimTooSmall: return "DimTooSmall";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidLabel: return "InvalidLabel";
  }
  return "Unknown";
}

ErrorKind kind_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return ErrorKind::Usage;
    case ErrorCode::NonFiniteLoss: return ErrorKind::Numerical;
    default: return ErrorKind::Data;
  }
}

}  // namespace caps_ood
