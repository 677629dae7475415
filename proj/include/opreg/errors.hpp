#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace opreg {

enum class ErrorKind {
  // validation-type failures (CLI exit code 1)
  DimensionMismatch,
  OutOfRange,
  NonAdmissibleCoefficient,
  NonAdmissiblePerturbation,
  WidthTooLarge,
  EmptyProbeSet,
  DegenerateScale,
  DegenerateFit,
  ConfigInvalid,
  // numerical failures (CLI exit code 2)
  SingularSystem,
  DependentImages,
  IllConditionedFit,
  RangeViolation,
  PropertyViolation,
  Stalled,
  MaxIterations,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::OutOfRange: return "OutOfRange";
    case ErrorKind::NonAdmissibleCoefficient: return "NonAdmissibleCoefficient";
    case ErrorKind::NonAdmissiblePerturbation: return "NonAdmissiblePerturbation";
    case ErrorKind::WidthTooLarge: return "WidthTooLarge";
    case ErrorKind::EmptyProbeSet: return "EmptyProbeSet";
    case ErrorKind::DegenerateScale: return "DegenerateScale";
    case ErrorKind::DegenerateFit: return "DegenerateFit";
    case ErrorKind::ConfigInvalid: return "ConfigInvalid";
    case ErrorKind::SingularSystem: return "SingularSystem";
    case ErrorKind::DependentImages: return "DependentImages";
    case ErrorKind::IllConditionedFit: return "IllConditionedFit";
    case ErrorKind::RangeViolation: return "RangeViolation";
    case ErrorKind::PropertyViolation: return "PropertyViolation";
    case ErrorKind::Stalled: return "Stalled";
    case ErrorKind::MaxIterations: return "MaxIterations";
  }
  return "Unknown";
}

inline bool is_validation_error(ErrorKind kind) {
  return kind <= ErrorKind::ConfigInvalid;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool condition, ErrorKind kind, const std::string& what) {
  if (!condition) fail(kind, what);
}

}  // namespace opreg
