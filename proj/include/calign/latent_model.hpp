#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "calign/mask.hpp"
#include "calign/rng.hpp"
#include "calign/spectral.hpp"

namespace calign {

// Shared-latent Gaussian model over per-modality embeddings:
//
//   β ~ N(0, I_r),   z^m = W^m β + μ^m + ε^m,   ε^m ~ N(0, (σ^m)² I_d).
//
// Modalities are conditionally independent given β, so inference from any
// observed subset Ω only touches the observed blocks.

struct ModalityParams {
  std::string id;
  Matrix loading;  // W^m, d x r
  Vector offset;   // μ^m, d
  double noise_std = 1.0;  // σ^m > 0
};

class GenerativeParams {
 public:
  GenerativeParams() = default;
  /// Throws InvalidInput when shapes disagree, ids repeat, or any σ^m ≤ 0 /
  /// non-finite.
  GenerativeParams(int latent_dim, std::vector<ModalityParams> modalities);

  int latent_dim() const { return latent_dim_; }
  int modality_count() const { return static_cast<int>(modalities_.size()); }
  Eigen::Index embed_dim() const;

  const ModalityParams& modality(int slot) const;
  const std::vector<ModalityParams>& modalities() const { return modalities_; }
  std::vector<std::string> ids() const;
  /// Throws InvalidModality for an unknown id.
  int slot_of(const std::string& id) const;

  /// Replaces one modality block (same id and shapes), revalidating.
  void set_modality(int slot, ModalityParams params);

 private:
  void validate() const;

  int latent_dim_ = 0;
  std::vector<ModalityParams> modalities_;
};

/// The observed embeddings of one instance: slot m holds z^m when m ∈ Ω.
class ObservedInstance {
 public:
  ObservedInstance() = default;
  /// Throws InvalidMask when nothing is observed, InvalidInput on mixed
  /// dimensions or non-finite entries.
  explicit ObservedInstance(std::vector<std::optional<Vector>> slots);

  /// Takes the columns of `stack` selected by `mask`.
  static ObservedInstance from_columns(const Matrix& stack, const ObservationMask& mask);

  int slots() const { return static_cast<int>(slots_.size()); }
  Eigen::Index dim() const { return dim_; }
  bool observes(int slot) const;
  const Vector& at(int slot) const;
  const ObservationMask& mask() const { return mask_; }

 private:
  std::vector<std::optional<Vector>> slots_;
  ObservationMask mask_;
  Eigen::Index dim_ = 0;
};

struct Posterior {
  Vector mean;  // m
  Matrix cov;   // V

  /// E[ββᵀ] = V + m mᵀ.
  Matrix second_moment() const { return cov + mean * mean.transpose(); }
};

struct SampledInstance {
  Vector beta;
  std::vector<Vector> embeddings;  // one per modality slot
};

SampledInstance sample_instance(const GenerativeParams& params, std::uint64_t seed);
SampledInstance sample_instance(const GenerativeParams& params, Engine& engine);

/// Closed-form posterior N(m, V) from the observed modalities only:
///   V = [I + Σ_Ω (σ^m)^-2 W^mᵀ W^m]^-1,  m = V Σ_Ω (σ^m)^-2 W^mᵀ (z^m − μ^m).
Posterior posterior_infer(const GenerativeParams& params, const ObservedInstance& obs);

/// Brute-force reference: conditions β on the concatenated observation using
/// the full joint covariance [[I, Wᵀ], [W, WWᵀ + Σ]] without the latent-space
/// shortcut. Throws OracleTooLarge when |Ω|·d exceeds `max_dim`.
Posterior posterior_oracle(const GenerativeParams& params, const ObservedInstance& obs,
                           Eigen::Index max_dim = 512);

/// Conditional mean E[z^target | z^Ω] computed from the joint Gaussian over
/// (z^Ω, z^target) directly; the reference for `impute`.
Vector conditional_mean_oracle(const GenerativeParams& params, const ObservedInstance& obs,
                               int target, Eigen::Index max_dim = 512);

/// Sufficient statistics of one modality's M-step, accumulated over instances
/// that observe it.
struct ModalityStats {
  double count = 0.0;
  Vector sum_z;       // Σ z
  Vector sum_mean;    // Σ m
  Matrix sum_zm;      // Σ z mᵀ
  Matrix sum_mm;      // Σ m mᵀ
  Matrix sum_cov;     // Σ V
  double sum_zz = 0.0;  // Σ ‖z‖²

  ModalityStats() = default;
  ModalityStats(Eigen::Index d, int r);

  void add(const Vector& z, const Posterior& post);
  /// this ← decay·this + (1 − decay)·batch
  void blend(const ModalityStats& batch, double decay);
  Matrix sum_second() const { return sum_mm + sum_cov; }
};

struct MStepOptions {
  /// μ → W sweeps per call. Each sweep uses the freshly updated μ; repeated
  /// sweeps converge to the joint maximizer in (μ, W).
  int max_sweeps = 500;
  double sweep_tol = 1e-14;
  double sigma2_floor = 1e-12;
  double max_condition = 1e12;
};

struct MStepResult {
  ModalityParams params;
  bool degenerate = false;  // σ² hit the floor
  int sweeps = 0;
};

/// Closed-form parameter update for one modality in the order μ → W → σ².
/// Every instance must observe `slot`; at least two instances are required.
/// Throws RankDeficient when Σ E[ββᵀ] is singular (message reports the
/// condition number).
MStepResult m_step(std::span<const ObservedInstance> batch, std::span<const Posterior> posteriors,
                   int slot, const GenerativeParams& current, const MStepOptions& options = {});

/// Same update driven purely by sufficient statistics (σ² via the expanded
/// quadratic form).
MStepResult m_step_from_stats(const ModalityStats& stats, const ModalityParams& current,
                              const MStepOptions& options = {});

/// Σ_i E_q[log p(z_i^m | β_i)] for candidate parameters of one modality; the
/// objective `m_step` maximizes.
double expected_complete_loglik(std::span<const ObservedInstance> batch,
                                std::span<const Posterior> posteriors, int slot,
                                const ModalityParams& candidate);

/// log N(z^Ω; μ^Ω, W^Ω W^Ωᵀ + Σ^Ω) evaluated in latent space via the
/// determinant lemma and Woodbury identity.
double observed_loglik(const GenerativeParams& params, const ObservedInstance& obs);

/// Dense evaluation of the same density (test scale).
double observed_loglik_dense(const GenerativeParams& params, const ObservedInstance& obs);

/// Σ_n log p(z_n^Ω) in a fixed summation order.
double total_loglik(const GenerativeParams& params, std::span<const ObservedInstance> data,
                    int threads = 1);

/// E_q[log p(z^Ω, β)] + H(q). Throws InvalidPosterior when q's covariance is
/// not symmetric positive definite.
double elbo(const GenerativeParams& params, const Posterior& q, const ObservedInstance& obs);

/// KL(q ‖ p) between two Gaussians over β.
double gaussian_kl(const Posterior& q, const Posterior& p);

/// ẑ^{m'} = W^{m'} m + μ^{m'}.
Vector impute(const GenerativeParams& params, const Posterior& post, int target);
Vector impute(const GenerativeParams& params, const Posterior& post, const std::string& target_id);

/// Warm start: per-modality sample mean, 0.1 × leading-r left singular vectors
/// of the centered data, residual standard deviation floored at 1e-3.
GenerativeParams initialize_params(std::span<const ObservedInstance> data, int latent_dim,
                                   std::vector<std::string> ids = {});

struct FitTrace {
  std::vector<double> loglik;  // L(θ^(0)), L(θ^(1)), ...
  std::vector<GenerativeParams> snapshots;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> degenerate_modalities;
};

struct EmOptions {
  int max_iters = 100;
  double tol = 1e-8;
  bool keep_snapshots = false;
  int threads = 1;
  MStepOptions m_step;
};

struct EmResult {
  GenerativeParams params;
  FitTrace trace;
};

/// Full-batch bi-step fitting: exact posteriors for every instance, then a
/// closed-form update of each modality over the instances observing it.
/// Stops when the log-likelihood gain drops below `tol`. Throws
/// InsufficientCoverage when some modality is observed by fewer than r + 1
/// instances.
EmResult em_fit(std::span<const ObservedInstance> data, const GenerativeParams& init,
                const EmOptions& options = {});

}  // namespace calign
