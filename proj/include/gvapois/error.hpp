#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gvapois {

// Every failure raised by the library carries one of these codes. The CLI
// prints name() verbatim, so the spelling is part of the external interface.
enum class ErrorCode {
  ShapeMismatch,
  NegativeCount,
  NonFiniteValue,
  InvalidArgument,
  UnsupportedOrder,
  RateOverflow,
  NonFiniteBound,
  InnerDivergence,
  NotConverged,
  DegenerateDesign,
  AllZeroResponse,
  SingularDenominator,
  ModeSearchFailure,
  NonFiniteLikelihood,
  NonPositiveDefiniteInformation,
  SingularInformation,
  ParseError,
  IoError,
};

constexpr std::string_view error_name(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NegativeCount: return "NegativeCount";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::UnsupportedOrder: return "UnsupportedOrder";
    case ErrorCode::RateOverflow: return "RateOverflow";
    case ErrorCode::NonFiniteBound: return "NonFiniteBound";
    case ErrorCode::InnerDivergence: return "InnerDivergence";
    case ErrorCode::NotConverged: return "NotConverged";
    case ErrorCode::DegenerateDesign: return "DegenerateDesign";
    case ErrorCode::AllZeroResponse: return "AllZeroResponse";
    case ErrorCode::SingularDenominator: return "SingularDenominator";
    case ErrorCode::ModeSearchFailure: return "ModeSearchFailure";
    case ErrorCode::NonFiniteLikelihood: return "NonFiniteLikelihood";
    case ErrorCode::NonPositiveDefiniteInformation: return "NonPositiveDefiniteInformation";
    case ErrorCode::SingularInformation: return "SingularInformation";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  std::string_view name() const noexcept { return error_name(code_); }

 private:
  ErrorCode code_;
};

}  // namespace gvapois
