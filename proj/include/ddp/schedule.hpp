#pragma once

namespace ddp {

enum class ScheduleKind { cosine, linear };

/// Continuous-time noise schedule over t ∈ [0, 1], parameterized through log-SNR.
struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::cosine;
  double ns = 0.0002;  // cosine time offset
  double ds = 0.00025; // cosine time stretch
  double beta_min = 0.1;
  double beta_max = 20.0;
  double clamp_eps = 1e-5;

  static ScheduleParams cosine() { return {}; }
  static ScheduleParams linear() {
    ScheduleParams p;
    p.kind = ScheduleKind::linear;
    return p;
  }

  /// Throws ValidationError when the invariants do not hold.
  void validate() const;
};

/// sqrt(ᾱ) and sqrt(1 - ᾱ) at one time point.
struct CorruptionCoeffs {
  double sqrt_alpha_bar;
  double sqrt_one_minus_alpha_bar;
};

/// log(ᾱ/(1-ᾱ)) at time t. The argument of the log is floored at clamp_eps,
/// which caps γ at -log(clamp_eps) near t = 0.
double log_snr(const ScheduleParams& params, double t);

/// ᾱ = sigmoid(γ).
double alpha_bar(double gamma);

/// ᾱ(t) = alpha_bar(log_snr(params, t)).
double alpha_bar_at(const ScheduleParams& params, double t);

CorruptionCoeffs coeffs(const ScheduleParams& params, double t);

/// Coefficients for a known ᾱ; both square roots are taken directly so that
/// the ᾱ → 1 and ᾱ → 0 limits are exact.
CorruptionCoeffs coeffs_from_alpha_bar(double alpha_bar);

const char* to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const char* name);

}  // namespace ddp
