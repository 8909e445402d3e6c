#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace mufasa {

enum class ErrorCode {
  kDimension,
  kRank,
  kDegenerateRow,
  kZeroNorm,
  kUnpopulatedGradient,
  kStaleGradient,
  kInsufficientNegatives,
  kEmptySample,
  kEmptyBlock,
  kEmptySelection,
  kNonFinite,
  kConfig,
  kParse,
  kFileNotFound,
  kIo,
};

std::string_view error_category(ErrorCode code);

// Process exit code for a failure of this category (always nonzero).
int exit_code_for(ErrorCode code);

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

}  // namespace mufasa
