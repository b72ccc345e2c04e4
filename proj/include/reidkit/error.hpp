#pragma once

#include <stdexcept>
#include <string>

namespace reidkit {

enum class ErrorCode {
  kInvalidGrouping,
  kUnsupportedPreset,
  kNoTarget,
  kInvalidConfig,
  kShape,
  kInvalidLabel,
  kNoNegatives,
  kEmptyEvaluation,
  kFingerprint,
  kLookup,
  kNonFinite,
  kRejectedSample,
  kIo,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidGrouping: return "invalid-grouping";
    case ErrorCode::kUnsupportedPreset: return "unsupported-preset";
    case ErrorCode::kNoTarget: return "no-target";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kInvalidLabel: return "invalid-label";
    case ErrorCode::kNoNegatives: return "no-negatives";
    case ErrorCode::kEmptyEvaluation: return "empty-evaluation";
    case ErrorCode::kFingerprint: return "fingerprint";
    case ErrorCode::kLookup: return "lookup";
    case ErrorCode::kNonFinite: return "non-finite";
    case ErrorCode::kRejectedSample: return "rejected-sample";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind rather than the message.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) throw Error(code, what);
}

}  // namespace reidkit
