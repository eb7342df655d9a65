#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace finmine {

enum class ErrorCode {
  // configuration / usage
  InvalidConfig,
  IOFailure,
  // data
  MalformedContainer,
  UnsupportedEncoding,
  EmptyAudio,
  ClipTooShort,
  SpectrogramTooShort,
  EmptyRecipe,
  ShapeMismatch,
  DegenerateBatch,
  CorruptCheckpoint,
  VersionMismatch,
  EmptyDataset,
  SingleClassDataset,
  ClassTooSmall,
  TooFewPoints,
  SingleCluster,
  UnresolvedProvenance,
  // numerical
  NonFiniteValue,
  NonFiniteLoss,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace finmine
