#include "dsn/error.hpp"

namespace dsn {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kDimensionMismatch: return "dimension mismatch";
    case ErrorCode::kZeroNorm: return "zero norm";
    case ErrorCode::kNoConvergence: return "no convergence";
    case ErrorCode::kRankDeficient: return "rank deficient";
    case ErrorCode::kEmptyPositiveSet: return "empty positive set";
    case ErrorCode::kLabelOutOfRange: return "label out of range";
    case ErrorCode::kInvalidDistribution: return "invalid distribution";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kPairing: return "impossible pairing";
    case ErrorCode::kProtocolViolation: return "protocol violation";
    case ErrorCode::kEmptyCategory: return "empty category";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kVersionMismatch: return "version mismatch";
    case ErrorCode::kTruncated: return "truncated payload";
    case ErrorCode::kCountMismatch: return "count mismatch";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kConfig: return "config error";
  }
  return "unknown";
}

}  // namespace dsn
