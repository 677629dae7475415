#pragma once

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "opreg/errors.hpp"

namespace opreg {

/// Sigmoidal activations, each normalized to the limits 0 at -inf and 1 at +inf.
enum class ActivationKind { Logistic, TanhRescaled, ArctanRescaled };

inline std::string_view to_string(ActivationKind k) {
  switch (k) {
    case ActivationKind::Logistic: return "logistic";
    case ActivationKind::TanhRescaled: return "tanh";
    case ActivationKind::ArctanRescaled: return "arctan";
  }
  return "logistic";
}

inline ActivationKind parse_activation(std::string_view s) {
  if (s == "logistic") return ActivationKind::Logistic;
  if (s == "tanh") return ActivationKind::TanhRescaled;
  if (s == "arctan") return ActivationKind::ArctanRescaled;
  fail(ErrorKind::ConfigInvalid, "unknown activation '" + std::string(s) + "'");
}

// Values saturate to exactly 0 or 1 once the distance to the limit drops below
// double resolution (e.g. logistic beyond t ~ 37).
inline double activation(ActivationKind kind, double t) {
  switch (kind) {
    case ActivationKind::Logistic:
      if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
      else {
        const double e = std::exp(t);
        return e / (1.0 + e);
      }
    // 0.5(1 + tanh t) == logistic(2t); this form keeps the lower tail accurate
    case ActivationKind::TanhRescaled: return activation(ActivationKind::Logistic, 2.0 * t);
    case ActivationKind::ArctanRescaled:
      if (t < 0.0) return -std::atan(1.0 / t) / std::numbers::pi;
      return 0.5 + std::atan(t) / std::numbers::pi;
  }
  return 0.0;
}

inline double activation_derivative(ActivationKind kind, double t) {
  switch (kind) {
    case ActivationKind::Logistic: {
      const double s = activation(kind, t);
      return s * (1.0 - s);
    }
    case ActivationKind::TanhRescaled: {
      const double c = std::cosh(t);
      return 0.5 / (c * c);
    }
    case ActivationKind::ArctanRescaled: return 1.0 / (std::numbers::pi * (1.0 + t * t));
  }
  return 0.0;
}

inline double activation_inverse(ActivationKind kind, double v) {
  if (!(v > 0.0 && v < 1.0)) {
    fail(ErrorKind::OutOfRange, "activation inverse needs a value in (0,1), got " + std::to_string(v));
  }
  switch (kind) {
    case ActivationKind::Logistic: return std::log(v) - std::log1p(-v);
    case ActivationKind::TanhRescaled: return 0.5 * (std::log(v) - std::log1p(-v));
    case ActivationKind::ArctanRescaled:
      if (v < 0.5) return -1.0 / std::tan(std::numbers::pi * v);
      return std::tan(std::numbers::pi * (v - 0.5));
  }
  return 0.0;
}

}  // namespace opreg
