#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ppk {

enum class ErrorCode {
  InvalidArgument,
  InvalidK,
  DuplicateCutoff,
  EmptyRegion,
  DimensionMismatch,
  SingleClass,
  Separation,
  NoConvergence,
  ZeroCoefficient,
  NotPositiveDefinite,
  TooFewSamples,
  NoAdjustableDimension,
  CapExceeded,
  UnknownSetup,
  MalformedCsv,
  Io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidK: return "InvalidK";
    case ErrorCode::DuplicateCutoff: return "DuplicateCutoff";
    case ErrorCode::EmptyRegion: return "EmptyRegion";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::Separation: return "Separation";
    case ErrorCode::NoConvergence: return "NoConvergence";
    case ErrorCode::ZeroCoefficient: return "ZeroCoefficient";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::TooFewSamples: return "TooFewSamples";
    case ErrorCode::NoAdjustableDimension: return "NoAdjustableDimension";
    case ErrorCode::CapExceeded: return "CapExceeded";
    case ErrorCode::UnknownSetup: return "UnknownSetup";
    case ErrorCode::MalformedCsv: return "MalformedCsv";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

// Errors that stem from bad input rather than from the numerics.
inline bool is_usage_error(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
    case ErrorCode::InvalidK:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::UnknownSetup:
    case ErrorCode::MalformedCsv:
    case ErrorCode::Io:
      return true;
    default:
      return false;
  }
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string &what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string &what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string &what) {
  if (!condition) {
    throw Error(code, what);
  }
}

}  // namespace ppk
