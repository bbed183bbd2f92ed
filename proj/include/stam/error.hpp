#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace stam {

enum class Errc {
  OutOfBounds,
  InvalidArgument,
  ParseError,
  TooFewSamples,
  NumericalFailure,
  DimensionMismatch,
  EmptyData,
  InvalidModel,
  BadIndex,
  SingularInputBlock,
  DuplicateTask,
  UnknownTask,
  InvalidParams,
  EmptyTaskSet,
  GeometryMismatch,
  EmptyInput,
  RangeViolation,
  NoAffordantRegion,
  Unreachable,
  BadBand,
  DuplicateDemo,
  EmptyStore,
  EmptyEval,
  UnknownDemo,
  FitFailure,
  NoModel,
  MalformedMessage,
  BindFailure,
};

std::string_view to_string(Errc code);

/// Every failure raised by the library carries one of the Errc codes so
/// callers (tests, the service) can branch on it without string matching.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace stam
