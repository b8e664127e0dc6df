#pragma once

#include <stdexcept>
#include <string>

namespace dixon {

enum class ErrorCode {
  InvalidArgument,
  OutOfDomain,
  DepthUnavailable,
  LeftDomain,
  StepUnderflow,
  NullTangent,
  DegenerateFrame,
  NotOrthogonal,
  OutsideTube,
  AmbiguousFold,
  UnsupportedOrder,
  UnsupportedWorldline,
  GridTooCoarse,
  NoConvergence,
  ConstraintViolated,
  ConstraintDrift,
  NonGeodesicWorldline,
  QuadratureNotConverged,
  SlopeTooShallow,
  ConfigParse,
  Io,
};

const char* error_code_name(ErrorCode c);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, std::string(error_code_name(code)) + ": " + msg);
}

}  // namespace dixon
