#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tisal {

enum class ErrorKind {
  MissingFile,
  SchemaViolation,
  ConditionTextMismatch,
  EmptyCondition,
  MalformedRow,
  AllRowsOutOfBounds,
  IoFailure,
  NoFixations,
  NonPositiveInput,
  ZeroVariance,
  AllPixelsFixated,
  EmptyPool,
  ZeroMass,
  ShapeMismatch,
  TooSmall,
  BadShape,
  DimMismatch,
  Divergence,
  MissingCheckpoint,
  InvalidArgument,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::MissingFile: return "MissingFile";
    case ErrorKind::SchemaViolation: return "SchemaViolation";
    case ErrorKind::ConditionTextMismatch: return "ConditionTextMismatch";
    case ErrorKind::EmptyCondition: return "EmptyCondition";
    case ErrorKind::MalformedRow: return "MalformedRow";
    case ErrorKind::AllRowsOutOfBounds: return "AllRowsOutOfBounds";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NoFixations: return "NoFixations";
    case ErrorKind::NonPositiveInput: return "NonPositiveInput";
    case ErrorKind::ZeroVariance: return "ZeroVariance";
    case ErrorKind::AllPixelsFixated: return "AllPixelsFixated";
    case ErrorKind::EmptyPool: return "EmptyPool";
    case ErrorKind::ZeroMass: return "ZeroMass";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::BadShape: return "BadShape";
    case ErrorKind::DimMismatch: return "DimMismatch";
    case ErrorKind::Divergence: return "Divergence";
    case ErrorKind::MissingCheckpoint: return "MissingCheckpoint";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

// Divergence and I/O problems are runtime failures; everything else is a
// rejected input.
inline bool is_runtime_error(ErrorKind kind) {
  return kind == ErrorKind::Divergence || kind == ErrorKind::IoFailure;
}

/// Error raised by every module. `subject()` names the offending entity
/// (a field, a pair id, a line number, a file) when there is one.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string subject = {}, const std::string& detail = {})
      : std::runtime_error(compose(kind, subject, detail)),
        kind_(kind),
        subject_(std::move(subject)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& subject() const noexcept { return subject_; }

 private:
  static std::string compose(ErrorKind kind, const std::string& subject,
                             const std::string& detail) {
    std::string msg(to_string(kind));
    if (!subject.empty()) msg += "(" + subject + ")";
    if (!detail.empty()) msg += ": " + detail;
    return msg;
  }

  ErrorKind kind_;
  std::string subject_;
};

}  // namespace tisal
