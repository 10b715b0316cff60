#include "calign/anchor.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "calign/error.hpp"

namespace calign {
namespace {

struct Spectra {
  LeadingTriplet full;
  double sigma2 = 0.0;
  LeadingTriplet observed;
  double observed_gap = 0.0;
};

Spectra spectra(const EmbeddingStack& stack, const ObservationMask& mask) {
  Spectra s;
  const SvdResult full = decompose(stack.matrix());
  s.full = LeadingTriplet{full.sigma(0), full.u.col(0), full.v.col(0), false};
  s.sigma2 = full.sigma.size() > 1 ? full.sigma(1) : 0.0;
  s.full.near_degenerate = s.full.sigma1 - s.sigma2 < kMinAnchorGap;

  const SvdResult obs = decompose(stack.observed(mask));
  s.observed = LeadingTriplet{obs.sigma(0), obs.u.col(0), obs.v.col(0), false};
  s.observed_gap = obs.sigma(0) - (obs.sigma.size() > 1 ? obs.sigma(1) : 0.0);
  s.observed.near_degenerate = s.observed_gap < kMinAnchorGap;
  return s;
}

// sqrt((σ1^Ω)² + η²) / σ1, clamped to [0, 1]; an upper bound on cos θ.
double captured_ratio(double sigma1, double sigma1_omega, double eta) {
  return std::min(1.0, std::sqrt(sigma1_omega * sigma1_omega + eta * eta) / sigma1);
}

double eta_of(const EmbeddingStack& stack, const ObservationMask& mask, const Vector& u1_omega) {
  double sum = 0.0;
  for (int slot : mask.missing()) {
    const double c = u1_omega.dot(stack.matrix().col(slot));
    sum += c * c;
  }
  return std::sqrt(sum);
}

}  // namespace

double aligned_distance(const Vector& a, const Vector& b) {
  return a.dot(b) < 0.0 ? (a + b).norm() : (a - b).norm();
}

double anchor_shift(const EmbeddingStack& stack, const ObservationMask& mask) {
  const Spectra s = spectra(stack, mask);
  if (s.full.near_degenerate)
    throw Error(ErrorKind::DegenerateSpectrum, "anchor_shift: full stack has a degenerate leading spectrum");
  if (s.observed.near_degenerate)
    throw Error(ErrorKind::DegenerateSpectrum,
                "anchor_shift: observed stack " + mask.to_string() + " has a degenerate leading spectrum");
  return aligned_distance(s.full.u1, s.observed.u1);
}

AnchorReport shift_bounds(const EmbeddingStack& stack, const ObservationMask& mask) {
  const Spectra s = spectra(stack, mask);
  AnchorReport rep;
  rep.sigma1 = s.full.sigma1;
  rep.sigma2 = s.sigma2;
  rep.sigma1_omega = s.observed.sigma1;
  rep.missing_count = mask.missing_count();
  rep.near_degenerate = s.full.near_degenerate || s.observed.near_degenerate;
  rep.delta = aligned_distance(s.full.u1, s.observed.u1);
  rep.eta = eta_of(stack, mask, s.observed.u1);
  rep.missing_norm = mask.is_full() ? 0.0 : decompose(stack.missing(mask)).sigma(0);

  const double gap = rep.sigma1 - rep.sigma2;
  const double ratio = captured_ratio(rep.sigma1, rep.sigma1_omega, rep.eta);
  rep.lower_bound = std::sqrt(std::max(0.0, 2.0 * (1.0 - ratio)));
  if (gap < kMinAnchorGap) {
    rep.upper_bound = std::numeric_limits<double>::infinity();
    rep.upper_infinite = true;
  } else {
    rep.upper_bound = std::numbers::sqrt2 * rep.missing_norm / gap;
  }
  if (rep.missing_count > 0)
    rep.epsilon_threshold = std::max(0.0, gap) / std::sqrt(static_cast<double>(rep.missing_count)) *
                            std::sqrt(std::max(0.0, 1.0 - ratio));

  const double lin = (rep.sigma1_omega + rep.eta * rep.eta) / rep.sigma1;
  const double sq = (rep.sigma1_omega * rep.sigma1_omega + rep.eta * rep.eta) / rep.sigma1;
  rep.lower_bound_linear_ratio = std::sqrt(std::max(0.0, 2.0 * (1.0 - lin)));
  rep.lower_bound_squared_ratio = std::sqrt(std::max(0.0, 2.0 * (1.0 - sq)));

  rep.bound_violated = rep.delta < rep.lower_bound || rep.delta > rep.upper_bound;
  return rep;
}

double calibration_threshold(const EmbeddingStack& stack, const ObservationMask& mask) {
  if (mask.is_full())
    throw Error(ErrorKind::NoMissingModality, "calibration_threshold: no modality is missing");
  return shift_bounds(stack, mask).epsilon_threshold;
}

double calibrated_shift_bound(double gap, int missing_count, double epsilon) {
  if (gap < kMinAnchorGap) return std::numeric_limits<double>::infinity();
  return std::numbers::sqrt2 * std::sqrt(static_cast<double>(missing_count)) * epsilon / gap;
}

EmbeddingStack completed_stack(const EmbeddingStack& stack, const ObservationMask& mask,
                               const std::map<int, Vector>& imputed) {
  const auto gone = mask.missing();
  bool match = imputed.size() == gone.size();
  for (int slot : gone) match = match && imputed.count(slot) == 1;
  if (!match)
    throw Error(ErrorKind::InvalidImputation, "imputed slots must match the missing set exactly");
  Matrix cols = stack.matrix();
  for (const auto& [slot, v] : imputed) {
    if (v.size() != stack.dim() || !v.allFinite())
      throw Error(ErrorKind::InvalidImputation,
                  "imputation for slot " + std::to_string(slot) + " has the wrong dimension or is non-finite");
    const double n = v.norm();
    if (n <= 0.0)
      throw Error(ErrorKind::InvalidImputation, "imputation for slot " + std::to_string(slot) + " is zero");
    cols.col(slot) = v / n;
  }
  return EmbeddingStack(std::move(cols), stack.modality_ids());
}

CalibratedShift calibrated_shift(const EmbeddingStack& stack, const ObservationMask& mask,
                                 const std::map<int, Vector>& imputed) {
  const EmbeddingStack completed = completed_stack(stack, mask, imputed);
  CalibratedShift out;
  out.delta_missing = anchor_shift(stack, mask);
  const SvdResult full = decompose(stack.matrix());
  const SvdResult cal = decompose(completed.matrix());
  const double cal_gap = cal.sigma(0) - (cal.sigma.size() > 1 ? cal.sigma(1) : 0.0);
  if (cal_gap < kMinAnchorGap)
    throw Error(ErrorKind::DegenerateSpectrum, "calibrated stack has a degenerate leading spectrum");
  out.delta_calibrated = aligned_distance(full.u.col(0), cal.u.col(0));
  out.improved = out.delta_calibrated < out.delta_missing;
  return out;
}

}  // namespace calign
