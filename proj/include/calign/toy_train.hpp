#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "calign/align_loss.hpp"
#include "calign/latent_model.hpp"
#include "calign/synth.hpp"

namespace calign {

/// One linear projection per modality: z^m = normalize(A^m x^m).
struct LinearEncoder {
  std::vector<Matrix> projections;  // d x p_m

  int modality_count() const { return static_cast<int>(projections.size()); }
  /// Gaussian entries scaled by 1/sqrt(p_m), drawn from the "encoder_init" stream.
  static LinearEncoder random(const std::vector<int>& raw_dims, int embed_dim, std::uint64_t seed);
  /// Stand-in for pretrained unimodal encoders: A^m = q·C B^mᵀ + (1 − q)·R^m
  /// with C shared across modalities and R^m the random start above. L_rep is
  /// blind to the sign of each column, so only a start with q > 0 fixes which
  /// relative orientation the modalities settle into.
  static LinearEncoder pretrained(const SynthWorld& world, int embed_dim, double quality, std::uint64_t seed);
};

/// Raw features per modality (p_m x N, one column per instance) and the
/// observation mask of every instance.
struct Dataset {
  std::vector<std::string> ids;
  std::vector<Matrix> features;
  std::vector<ObservationMask> masks;

  int size() const { return static_cast<int>(masks.size()); }
  int modality_count() const { return static_cast<int>(features.size()); }
  /// Features of the selected world instances; `masks` must hold one entry per index.
  static Dataset from_world(const SynthWorld& world, const std::vector<int>& indices,
                            std::vector<ObservationMask> masks);
  /// Same instances with every modality observed.
  Dataset completed() const;
};

/// normalize(A x). Throws DegenerateEmbedding when A x is zero.
Vector encode_vector(const Matrix& projection, const Vector& features);

/// Encodes the observed modalities of instance `i`.
ObservedInstance encode(const LinearEncoder& encoder, const Dataset& data, int i);

struct TrainConfig {
  int latent_dim = 4;
  int embed_dim = 16;
  double tau = 0.05;
  double tau_prime = 0.1;
  double alpha = 0.1;
  /// Step size is learning_rate × lr_scale. The base rate matches the usual
  /// deep-encoder setting; the scale adapts it to tiny linear encoders.
  double learning_rate = 1e-5;
  double lr_scale = 1e5;
  int batch_size = 64;
  int epochs = 30;
  int warmup_epochs = 1;
  std::uint64_t seed = 0;
  bool impute = true;             // complete stacks with imputations
  bool matching_enabled = false;
  double ema_decay = 0.9;         // running sufficient statistics
  int query_slot = kTextSlot;     // retrieval direction text → vision
  int gallery_slot = kVisionSlot;
  MStepOptions m_step;

  double step_size() const { return learning_rate * lr_scale; }
};

struct TrainReport {
  std::vector<double> loss;      // mean batch L_rep per epoch
  std::vector<double> loglik;    // held-out mean log-likelihood per epoch
  std::vector<double> recall1, recall5, recall10;
  LinearEncoder encoder;
  GenerativeParams params;
  std::optional<MatchingHead> head;
  int steps = 0;
  int skipped_instances = 0;
  std::vector<std::string> warnings;
};

/// Per-batch generative updates with exponentially blended sufficient
/// statistics. The first batch that observes a modality seeds its statistics.
class GenerativeTracker {
 public:
  GenerativeTracker(int modalities, double decay, MStepOptions options = {});
  /// Folds one batch into the running statistics and refits every modality
  /// the batch observes. Rank-deficient updates keep the old block and add a
  /// warning.
  void update(GenerativeParams& params, const std::vector<ObservedInstance>& batch,
              const std::vector<Posterior>& posteriors, std::vector<std::string>* warnings = nullptr);

 private:
  std::vector<std::optional<ModalityStats>> running_;
  double decay_;
  MStepOptions options_;
};

/// Generative warm-up on a fully observed dataset: each instance hides one
/// uniformly chosen modality, then `warmup_epochs` passes of per-batch updates
/// run from `initialize_params`. Throws InvalidWarmupData for incomplete data
/// or a single modality.
GenerativeParams warmup(const Dataset& complete, const LinearEncoder& encoder, const TrainConfig& config);

/// Per batch: encode observed → posterior → generative update
/// → impute missing with the updated parameters → gradient step on the
/// encoders with imputed columns held constant. Held-out metrics are computed
/// after every epoch. Throws InsufficientCoverage when a modality is never
/// observed in `train_data`.
TrainReport train(const Dataset& train_data, const Dataset& heldout, const TrainConfig& config,
                  const Dataset* warmup_data = nullptr, const LinearEncoder* initial = nullptr);

/// Fraction of queries (columns) whose mate gallery column ranks in the top
/// k by inner product; ties favour the lower gallery index. `mates[i]` is the
/// gallery index of query i (identity when empty). Throws InvalidK unless
/// 1 ≤ k ≤ gallery size.
double recall_at_k(const Matrix& queries, const Matrix& gallery, int k, const std::vector<int>& mates = {});

}  // namespace calign
