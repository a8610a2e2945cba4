#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace semcd {

enum class ErrorKind {
  InvalidArgument,
  InvalidVocabulary,
  ConfigError,
  IoError,
  MissingDirectory,
  EmptyDataset,
  LabelOutOfRange,
  DecodeError,
  ShapeMismatch,
  ShapeError,
  CheckpointMismatch,
  NonFiniteInput,
  WidthMismatch,
  SequenceTooLong,
  GridMismatch,
  LevelMismatch,
  NonBinaryTarget,
  FrozenParameterDrift,
  DivergedLoss,
  VersionMismatch,
  CorruptFile,
  EmptyMatrix,
};

inline constexpr std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidVocabulary: return "InvalidVocabulary";
    case ErrorKind::ConfigError: return "ConfigError";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::MissingDirectory: return "MissingDirectory";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorKind::DecodeError: return "DecodeError";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::WidthMismatch: return "WidthMismatch";
    case ErrorKind::SequenceTooLong: return "SequenceTooLong";
    case ErrorKind::GridMismatch: return "GridMismatch";
    case ErrorKind::LevelMismatch: return "LevelMismatch";
    case ErrorKind::NonBinaryTarget: return "NonBinaryTarget";
    case ErrorKind::FrozenParameterDrift: return "FrozenParameterDrift";
    case ErrorKind::DivergedLoss: return "DivergedLoss";
    case ErrorKind::VersionMismatch: return "VersionMismatch";
    case ErrorKind::CorruptFile: return "CorruptFile";
    case ErrorKind::EmptyMatrix: return "EmptyMatrix";
  }
  return "Unknown";
}

/// Single exception type for the library; callers branch on kind().
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace semcd
