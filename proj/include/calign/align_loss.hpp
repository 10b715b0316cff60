#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "calign/spectral.hpp"

namespace calign {

struct LossConfig {
  double tau = 0.05;        // singular-value softmax temperature
  double tau_prime = 0.1;   // anchor-uniformity temperature
  double alpha = 0.1;       // matching-term weight
  std::uint64_t seed = 0;   // negative sampling
};

/// Toy instance-matching head: ŷ = logistic(weight · pooled + bias), where
/// `pooled` is the elementwise mean of a pair of embeddings.
struct MatchingHead {
  Vector weight;
  double bias = 0.0;
};

/// One completed stack (d x k) and which of its columns were observed. An
/// empty `observed` means every column was observed.
struct LossItem {
  Matrix stack;
  std::vector<bool> observed;

  static LossItem from(const EmbeddingStack& stack, std::vector<bool> observed = {});
};

struct LossBreakdown {
  double total = 0.0;
  double align_term = 0.0;       // mean singular-softmax fraction
  double uniformity_term = 0.0;  // mean anchor-softmax fraction
  std::optional<double> matching_term;
  double tau = 0.0;
  double tau_prime = 0.0;
  double alpha = 0.0;
};

/// exp(λ1/τ) / Σ_j exp(λj/τ) over the k singular values of the stack (zero
/// padded when d < k). Throws InvalidStack when k < 2.
double align_term(const Matrix& stack, double tau);
double align_term(const EmbeddingStack& stack, double tau);

/// (1/N) Σ_i exp(⟨u_i,u_i⟩/τ') / Σ_j exp(⟨u_i,u_j⟩/τ'). Throws InvalidAnchor
/// for anchors whose norm is off by more than 1e-6.
double uniformity_term(const std::vector<Vector>& anchors, double tau_prime);

/// Canonical-sign leading left singular vector of a stack.
Vector anchor_of(const Matrix& stack);

/// Positive pairs (first and last observed column of each instance) and
/// negatives (first observed column of i with the last observed column of
/// π(i), π a seeded derangement), pooled by elementwise mean.
struct MatchingSamples {
  std::vector<Vector> pooled;
  std::vector<double> labels;
  std::vector<int> partner;  // π(i) for the negatives
};

/// Throws InsufficientNegatives for a batch smaller than 2.
MatchingSamples matching_samples(const std::vector<LossItem>& batch, std::uint64_t seed);

/// Mean of y log ŷ + (1 − y) log(1 − ŷ) (a log-likelihood, so ≤ 0).
double matching_loglik(const MatchingSamples& samples, const MatchingHead& head);

struct HeadGradient {
  Vector weight;
  double bias = 0.0;
};

/// Gradient of `matching_loglik` with respect to the head parameters.
HeadGradient matching_head_gradient(const MatchingSamples& samples, const MatchingHead& head);

double matching_term(const std::vector<LossItem>& batch, const MatchingHead& head, std::uint64_t seed);

/// total = −mean(align) − uniformity + α·matching. The matching term is only
/// evaluated when `head` is given, over observed columns only.
LossBreakdown rep_loss(const std::vector<LossItem>& batch, const LossConfig& config,
                       const MatchingHead* head = nullptr);

struct LossGradient {
  LossBreakdown loss;
  std::vector<Matrix> stacks;  // dL/dZ_i, same shape as each stack
};

/// Analytic gradient of `rep_loss` with respect to every stack entry.
/// Singular values differentiate as u_j v_jᵀ; the anchor derivative uses the
/// first-order perturbation of Z Zᵀ. Throws DegenerateSpectrum naming the
/// instance when its leading gap is below 1e-6.
LossGradient rep_loss_grad(const std::vector<LossItem>& batch, const LossConfig& config,
                           const MatchingHead* head = nullptr);

}  // namespace calign
