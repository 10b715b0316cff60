#pragma once

#include <map>
#include <optional>

#include "calign/spectral.hpp"

namespace calign {

// Anchor = leading left singular vector u1 of a modality stack. The anchor
// shift Δ is ‖u1(Z) − u1(Z^Ω)‖ after flipping u1(Z^Ω) into the same half-space
// as u1(Z), so 0 ≤ Δ ≤ √2.

inline constexpr double kMinAnchorGap = 1e-8;

struct AnchorReport {
  double delta = 0.0;
  std::optional<double> delta_calibrated;
  double sigma1 = 0.0;
  double sigma2 = 0.0;
  double sigma1_omega = 0.0;
  double eta = 0.0;
  double missing_norm = 0.0;  // ‖Z^Ω̄‖₂
  int missing_count = 0;
  /// sqrt(2(1 − min(1, sqrt((σ1^Ω)² + η²)/σ1)))
  double lower_bound = 0.0;
  /// √2 ‖Z^Ω̄‖₂ / (σ1 − σ2); +inf when the gap is below 1e-8
  double upper_bound = 0.0;
  double epsilon_threshold = 0.0;
  // Alternative lower-bound expressions, kept for audit only:
  // sqrt(2(1 − (σ1^Ω + η²)/σ1)) and sqrt(2(1 − ((σ1^Ω)² + η²)/σ1)).
  double lower_bound_linear_ratio = 0.0;
  double lower_bound_squared_ratio = 0.0;
  bool near_degenerate = false;
  bool upper_infinite = false;
  bool bound_violated = false;
};

/// ‖a − b‖ after flipping b so that ⟨a, b⟩ ≥ 0.
double aligned_distance(const Vector& a, const Vector& b);

/// Throws DegenerateSpectrum when Z or Z^Ω has a leading gap below 1e-8
/// (a single-column Z^Ω counts σ2 = 0).
double anchor_shift(const EmbeddingStack& stack, const ObservationMask& mask);

/// Measured shift plus both bounds and the calibration threshold. Degenerate
/// spectra are flagged rather than thrown.
AnchorReport shift_bounds(const EmbeddingStack& stack, const ObservationMask& mask);

/// ε* = ((σ1 − σ2)/sqrt(|Ω̄|)) · sqrt(max(0, 1 − min(1, sqrt((σ1^Ω)² + η²)/σ1))).
/// Throws NoMissingModality when Ω covers every slot.
double calibration_threshold(const EmbeddingStack& stack, const ObservationMask& mask);

/// Upper bound on the calibrated shift when every imputed column is within ε
/// of the truth: √2 · sqrt(|Ω̄|) · ε / (σ1 − σ2).
double calibrated_shift_bound(double gap, int missing_count, double epsilon);

/// Observed columns of `stack` plus renormalized imputations for the missing
/// slots, in the original slot order. Throws InvalidImputation unless the keys
/// of `imputed` are exactly Ω̄.
EmbeddingStack completed_stack(const EmbeddingStack& stack, const ObservationMask& mask,
                               const std::map<int, Vector>& imputed);

struct CalibratedShift {
  double delta_calibrated = 0.0;
  double delta_missing = 0.0;
  bool improved = false;
};

CalibratedShift calibrated_shift(const EmbeddingStack& stack, const ObservationMask& mask,
                                 const std::map<int, Vector>& imputed);

}  // namespace calign
