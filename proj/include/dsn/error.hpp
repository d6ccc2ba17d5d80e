#pragma once

#include <stdexcept>
#include <string>

namespace dsn {

enum class ErrorCode {
  kInvalidArgument,
  kDimensionMismatch,
  kZeroNorm,
  kNoConvergence,
  kRankDeficient,
  kEmptyPositiveSet,
  kLabelOutOfRange,
  kInvalidDistribution,
  kNonFinite,
  kPairing,
  kProtocolViolation,
  kEmptyCategory,
  // file formats
  kIo,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kCountMismatch,
  kParse,
  // configuration
  kConfig,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace dsn
