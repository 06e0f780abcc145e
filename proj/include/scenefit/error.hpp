#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scenefit {

enum class ErrorCode {
  kDegenerateHull,
  kInfeasiblePair,
  kInfeasibleState,
  kInfeasibleInitialization,
  kSingularSystem,
  kTrimExhausted,
  kUnknownScene,
  kShrinkFailed,
  kInvalidInput,
  kIo,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDegenerateHull: return "DegenerateHull";
    case ErrorCode::kInfeasiblePair: return "InfeasiblePair";
    case ErrorCode::kInfeasibleState: return "InfeasibleState";
    case ErrorCode::kInfeasibleInitialization: return "InfeasibleInitialization";
    case ErrorCode::kSingularSystem: return "SingularSystem";
    case ErrorCode::kTrimExhausted: return "TrimExhausted";
    case ErrorCode::kUnknownScene: return "UnknownScene";
    case ErrorCode::kShrinkFailed: return "ShrinkFailed";
    case ErrorCode::kInvalidInput: return "InvalidInput";
    case ErrorCode::kIo: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace scenefit
