#pragma once

#include <stdexcept>
#include <string>

namespace ews {

enum class ErrorCode {
  kConfig = 1,
  kDomain,
  kParse,
  kIo,
  kNotFound,
  kSchema,
  kConflict,
  kTraining,
  kMissingArtifact,
  kStaleArtifact,
};

// Every failure raised by the core carries a code so the C API can map it
// onto a status without parsing messages.
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

}  // namespace ews
