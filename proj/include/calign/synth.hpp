#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "calign/anchor.hpp"
#include "calign/latent_model.hpp"
#include "calign/mask.hpp"

namespace calign {

/// Slot layout shared by the mask patterns: vision, text, audio, then any
/// extra modalities (subtitle, ...).
inline constexpr int kVisionSlot = 0;
inline constexpr int kTextSlot = 1;
inline constexpr int kAudioSlot = 2;

std::vector<std::string> default_modality_ids(int k);

struct SynthSpec {
  int latent_dim = 4;
  int embed_dim = 16;
  int modalities = 4;
  int instances = 5000;
  int raw_dim = 32;
  double signal = 1.0;     // scale of every loading matrix
  double spread = 0.5;     // how far each modality's loading departs from the shared one
  double offset_scale = 0.5;
  double noise = 0.1;      // embedding noise σ^m
  double raw_noise = 0.05; // raw-feature noise
  double train_fraction = 0.8;
};

/// Ground truth θ*, latents, true embeddings and raw features, all derived
/// from (spec, seed). Embeddings and raw features are stored one matrix per
/// modality with one column per instance.
struct SynthWorld {
  SynthSpec spec;
  std::uint64_t seed = 0;
  GenerativeParams truth;
  Matrix latents;                  // r x N
  std::vector<Matrix> embeddings;  // d x N per modality
  std::vector<Matrix> raw_bases;   // p x r per modality
  std::vector<Matrix> features;    // p x N per modality

  int size() const { return spec.instances; }
  int modality_count() const { return spec.modalities; }
  int train_count() const;
  std::vector<int> train_indices() const;
  std::vector<int> heldout_indices() const;
  /// True embeddings of instance i as a d x k stack.
  Matrix stack(int i) const;
  /// Unit-normalized true embeddings of instance i as a d x k stack.
  Matrix unit_stack(int i) const;
};

/// Throws InvalidSpec for r > d, k < 2, N < 10 or non-positive sizes.
SynthWorld make_world(const SynthSpec& spec, std::uint64_t seed);

/// Named mask policy. Text strings: `full`, `vt`, `at`, `mix:P`,
/// `random:Q:MIN_OBS`.
///
/// `vt` drops audio and `at` drops vision; modalities past the first three
/// stay observed under both.
struct MaskPattern {
  enum class Kind { Full, VisionText, AudioText, Mix, Random };
  Kind kind = Kind::Full;
  double fraction = 0.5;  // mix: share of vt instances; random: drop probability
  int min_observed = 1;

  /// Throws Parse for malformed text.
  static MaskPattern parse(std::string_view text);
  std::string to_string() const;
};

/// One mask per instance, deterministic by (seed, stream). Throws InvalidSpec
/// when the pattern needs a slot the world lacks.
std::vector<ObservationMask> make_masks(const MaskPattern& pattern, int k, int count,
                                        std::uint64_t seed, std::string_view stream = "masks");

/// True embeddings of the selected instances restricted to their masks.
std::vector<ObservedInstance> observed_data(const SynthWorld& world, const std::vector<int>& indices,
                                            const std::vector<ObservationMask>& masks);

struct ModalityMse {
  std::string id;
  int occurrences = 0;
  std::optional<double> mse;         // absent when never masked
  std::optional<double> random_mse;
};

struct ImputationMse {
  std::vector<ModalityMse> per_modality;
  std::optional<double> random_baseline_mse;  // pooled over every occurrence
};

/// Squared distance between unit-normalized truth and unit-normalized
/// imputation, averaged per modality over masked occurrences. The baseline
/// draws a uniform random unit vector per occurrence.
ImputationMse imputation_mse(const SynthWorld& world, const GenerativeParams& params,
                             const std::vector<int>& indices,
                             const std::vector<ObservationMask>& masks, std::uint64_t seed);

struct ShiftTrial {
  int instance = 0;
  ObservationMask mask;
  CalibratedShift shift;
};

struct ShiftSummary {
  int requested = 0;
  int evaluated = 0;
  int skipped_degenerate = 0;
  int skipped_complete = 0;
  double mean_delta_missing = 0.0;
  double mean_delta_calibrated = 0.0;
  double improved_fraction = 0.0;
  std::vector<ShiftTrial> trials;
};

/// Anchor shift before and after calibration on up to `trials` instances,
/// taken in order from `indices`. Instances with nothing missing or with a
/// degenerate spectrum are skipped and counted. With `random_imputation` the
/// imputations are replaced by random unit vectors (control run). Throws
/// InvalidSpec for k < 3.
ShiftSummary shift_experiment(const SynthWorld& world, const GenerativeParams& params,
                              const std::vector<int>& indices,
                              const std::vector<ObservationMask>& masks, int trials,
                              std::uint64_t seed, bool random_imputation = false);

}  // namespace calign
