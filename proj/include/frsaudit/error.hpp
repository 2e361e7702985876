#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace frsaudit {

enum class ErrorCode {
  // corpus
  MissingLabel,
  DuplicateIdentityVariant,
  UnreadableImage,
  EmptyBBox,
  BBoxOutOfBounds,
  InsufficientGroup,
  MissingVariant,
  UnknownCountry,
  BadManifest,
  // variants
  BadAmplitude,
  BadRadius,
  FaceNotFound,
  InvalidMaskPolygon,
  // backends
  FaceNotDetected,
  TransportError,
  AuthError,
  BadResponse,
  // model
  ShapeMismatch,
  NonFiniteLoss,
  BadCheckpoint,
  BadConfig,
  // explain
  NoConvLayer,
  EmptyGroup,
  DimMismatch,
  // mitigation
  LabelMismatch,
  // audit
  MissingCell,
  InsufficientCells,
  // generic
  InvalidArgument,
  Io,
};

std::string_view to_string(ErrorCode code);
/// Inverse of to_string; nullopt for unknown names.
std::optional<ErrorCode> parse_error_code(std::string_view name);

/// Every failure raised by the library carries a machine-readable code so the
/// CLI can map it onto exit codes and structured error output.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

}  // namespace frsaudit
