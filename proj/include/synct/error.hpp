#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace synct {

// Error categories. The numeric value doubles as the CLI exit code.
enum class ErrorCode : int {
  kDimension = 10,
  kShape,
  kInvalidMask,
  kEmptyInput,
  kContract,
  kNumeric,
  kGeometry,
  kProtocol,
  kAvailability,
  kDegenerateLattice,
  kCapacity,
  kVocab,
  kUndefinedMetric,
  kIo,
  kCorruptHeader,
  kTruncatedFile,
  kVersionMismatch,
  kConfig,
  kTrainingDiverged,
};

constexpr std::string_view category_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kInvalidMask: return "invalid-mask";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kGeometry: return "geometry";
    case ErrorCode::kProtocol: return "protocol";
    case ErrorCode::kAvailability: return "availability";
    case ErrorCode::kDegenerateLattice: return "degenerate-lattice";
    case ErrorCode::kCapacity: return "capacity";
    case ErrorCode::kVocab: return "vocab";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kCorruptHeader: return "corrupt-header";
    case ErrorCode::kTruncatedFile: return "truncated-file";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kTrainingDiverged: return "training-diverged";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view category() const noexcept { return category_name(code_); }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool condition, ErrorCode code, const std::string& what) {
  if (!condition) fail(code, what);
}

}  // namespace synct
