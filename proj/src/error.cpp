#include "frsaudit/error.hpp"

namespace frsaudit {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MissingLabel: return "MissingLabel";
    case ErrorCode::DuplicateIdentityVariant: return "DuplicateIdentityVariant";
    case ErrorCode::UnreadableImage: return "UnreadableImage";
    case ErrorCode::EmptyBBox: return "EmptyBBox";
    case ErrorCode::BBoxOutOfBounds: return "BBoxOutOfBounds";
    case ErrorCode::InsufficientGroup: return "InsufficientGroup";
    case ErrorCode::MissingVariant: return "MissingVariant";
    case ErrorCode::UnknownCountry: return "UnknownCountry";
    case ErrorCode::BadManifest: return "BadManifest";
    case ErrorCode::BadAmplitude: return "BadAmplitude";
    case ErrorCode::BadRadius: return "BadRadius";
    case ErrorCode::FaceNotFound: return "FaceNotFound";
    case ErrorCode::InvalidMaskPolygon: return "InvalidMaskPolygon";
    case ErrorCode::FaceNotDetected: return "FaceNotDetected";
    case ErrorCode::TransportError: return "TransportError";
    case ErrorCode::AuthError: return "AuthError";
    case ErrorCode::BadResponse: return "BadResponse";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::BadCheckpoint: return "BadCheckpoint";
    case ErrorCode::BadConfig: return "BadConfig";
    case ErrorCode::NoConvLayer: return "NoConvLayer";
    case ErrorCode::EmptyGroup: return "EmptyGroup";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::LabelMismatch: return "LabelMismatch";
    case ErrorCode::MissingCell: return "MissingCell";
    case ErrorCode::InsufficientCells: return "InsufficientCells";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

std::optional<ErrorCode> parse_error_code(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::Io); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

}  // namespace frsaudit
