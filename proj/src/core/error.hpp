#pragma once

#include <stdexcept>
#include <string>

namespace gapkit {

enum class ErrorCode {
  invalid_argument = 1,
  shape_mismatch = 2,
  io = 3,
  format = 4,
  checksum = 5,
  overflow = 6,
  numeric = 7,
  degenerate = 8,
  unsupported = 9,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

}  // namespace gapkit
