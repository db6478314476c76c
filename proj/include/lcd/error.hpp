#pragma once

#include <stdexcept>
#include <string>

namespace lcd {

enum class ErrorCode {
  kInvalidArgument,
  kInvalidDepth,
  kBehindCamera,
  kOutOfBounds,
  kParse,
  kShapeMismatch,
  kDegenerate,
  kIo,
  kVersionMismatch,
  kConfig,
  kEmptyInput,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace lcd
