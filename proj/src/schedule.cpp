#include "ddp/schedule.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

#include "ddp/errors.hpp"

namespace ddp {

void ScheduleParams::validate() const {
  std::string bad;
  if (!(ns >= 0)) bad += " ns";
  if (!(ds >= 0)) bad += " ds";
  if (!(clamp_eps > 0)) bad += " clamp_eps";
  if (kind == ScheduleKind::linear && !(beta_min > 0 && beta_min < beta_max)) bad += " beta_min/beta_max";
  if (!bad.empty()) throw ValidationError("invalid schedule parameters:" + bad);
}

double log_snr(const ScheduleParams& params, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw DomainError("log_snr: t = " + std::to_string(t) + " outside [0, 1]");
  double odds_inverse;  // (1 - ᾱ) / ᾱ
  if (params.kind == ScheduleKind::cosine) {
    const double c = std::cos((t + params.ns) / (1.0 + params.ds) * std::numbers::pi / 2.0);
    odds_inverse = 1.0 / (c * c) - 1.0;
  } else {
    odds_inverse = std::expm1(params.beta_min * t + 0.5 * (params.beta_max - params.beta_min) * t * t);
  }
  return -std::log(std::max(odds_inverse, params.clamp_eps));
}

double alpha_bar(double gamma) {
  if (gamma >= 0) return 1.0 / (1.0 + std::exp(-gamma));
  const double e = std::exp(gamma);
  return e / (1.0 + e);
}

double alpha_bar_at(const ScheduleParams& params, double t) { return alpha_bar(log_snr(params, t)); }

CorruptionCoeffs coeffs_from_alpha_bar(double a) {
  return {std::sqrt(a), std::sqrt(1.0 - a)};
}

CorruptionCoeffs coeffs(const ScheduleParams& params, double t) {
  return coeffs_from_alpha_bar(alpha_bar_at(params, t));
}

const char* to_string(ScheduleKind kind) { return kind == ScheduleKind::cosine ? "cosine" : "linear"; }

ScheduleKind schedule_kind_from_string(const char* name) {
  const std::string_view s(name);
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "linear") return ScheduleKind::linear;
  throw ValidationError("unknown schedule '" + std::string(s) + "' (expected cosine|linear)");
}

}  // namespace ddp
