#include "calign/toy_train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "calign/error.hpp"
#include "calign/rng.hpp"

namespace calign {
namespace {

constexpr double kSkipGap = 1e-6;

std::vector<int> shuffled(int n, std::uint64_t seed, std::string_view name, std::uint64_t epoch) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Engine rng = make_stream(seed, name, epoch);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::vector<std::vector<int>> batches_of(const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<int>> out;
  for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(batch_size));
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
  }
  // a trailing single instance cannot form negatives; fold it into the previous batch
  if (out.size() > 1 && out.back().size() < 2) {
    out[out.size() - 2].push_back(out.back().front());
    out.pop_back();
  }
  return out;
}

void check_config(const TrainConfig& c) {
  if (c.latent_dim < 1 || c.embed_dim < c.latent_dim || c.batch_size < 2 || c.epochs < 0 || c.warmup_epochs < 0)
    throw Error(ErrorKind::InvalidInput, "train config: 1 ≤ latent_dim ≤ embed_dim, batch_size ≥ 2, epochs ≥ 0 required");
  if (!(c.tau > 0.0) || !(c.tau_prime > 0.0) || c.alpha < 0.0 || !(c.step_size() >= 0.0))
    throw Error(ErrorKind::InvalidInput, "train config: temperatures must be positive, alpha and step nonnegative");
  if (c.ema_decay < 0.0 || c.ema_decay >= 1.0)
    throw Error(ErrorKind::InvalidInput, "train config: ema_decay must lie in [0, 1)");
}

void check_dataset(const Dataset& data, const char* what) {
  if (data.features.empty()) throw Error(ErrorKind::InvalidInput, std::string(what) + ": no modalities");
  if (data.ids.size() != data.features.size())
    throw Error(ErrorKind::InvalidInput, std::string(what) + ": ids and features disagree");
  for (const auto& f : data.features)
    if (f.cols() != data.size())
      throw Error(ErrorKind::InvalidInput, std::string(what) + ": feature columns must match the mask count");
  for (const auto& m : data.masks)
    if (m.slots() != data.modality_count())
      throw Error(ErrorKind::InvalidMask, std::string(what) + ": mask slot count does not match");
}

std::vector<ObservedInstance> encode_all(const LinearEncoder& encoder, const Dataset& data) {
  std::vector<ObservedInstance> out;
  out.reserve(static_cast<std::size_t>(data.size()));
  for (int i = 0; i < data.size(); ++i) out.push_back(encode(encoder, data, i));
  return out;
}

struct HeldoutMetrics {
  double loglik = 0.0;
  double r1 = 0.0, r5 = 0.0, r10 = 0.0;
};

HeldoutMetrics evaluate(const LinearEncoder& encoder, const GenerativeParams& params, const Dataset& heldout,
                        const TrainConfig& config) {
  const auto encoded = encode_all(encoder, heldout);
  HeldoutMetrics out;
  out.loglik = total_loglik(params, encoded) / static_cast<double>(encoded.size());
  const Eigen::Index d = encoded.front().dim();
  const auto n = static_cast<Eigen::Index>(encoded.size());
  Matrix queries(d, n), gallery(d, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& obs = encoded[static_cast<std::size_t>(i)];
    if (!obs.observes(config.query_slot) || !obs.observes(config.gallery_slot))
      throw Error(ErrorKind::InvalidInput, "held-out instances must observe the query and gallery modalities");
    queries.col(i) = obs.at(config.query_slot);
    gallery.col(i) = obs.at(config.gallery_slot);
  }
  const int cap = static_cast<int>(n);
  out.r1 = recall_at_k(queries, gallery, std::min(1, cap));
  out.r5 = recall_at_k(queries, gallery, std::min(5, cap));
  out.r10 = recall_at_k(queries, gallery, std::min(10, cap));
  return out;
}

}  // namespace

LinearEncoder LinearEncoder::random(const std::vector<int>& raw_dims, int embed_dim, std::uint64_t seed) {
  LinearEncoder enc;
  Engine rng = make_stream(seed, "encoder_init");
  for (int p : raw_dims) enc.projections.push_back(standard_normal(rng, embed_dim, p) / std::sqrt(static_cast<double>(p)));
  return enc;
}

LinearEncoder LinearEncoder::pretrained(const SynthWorld& world, int embed_dim, double quality, std::uint64_t seed) {
  if (quality < 0.0 || quality > 1.0) throw Error(ErrorKind::InvalidInput, "encoder quality must lie in [0, 1]");
  if (embed_dim < world.spec.latent_dim) throw Error(ErrorKind::InvalidInput, "embed_dim is smaller than the latent dimension");
  std::vector<int> dims;
  for (const auto& f : world.features) dims.push_back(static_cast<int>(f.rows()));
  LinearEncoder enc = random(dims, embed_dim, seed);
  Engine rng = make_stream(seed, "encoder_shared");
  const Matrix shared = random_orthonormal(rng, embed_dim, world.spec.latent_dim);
  for (std::size_t m = 0; m < enc.projections.size(); ++m)
    enc.projections[m] = quality * shared * world.raw_bases[m].transpose() + (1.0 - quality) * enc.projections[m];
  return enc;
}

Dataset Dataset::from_world(const SynthWorld& world, const std::vector<int>& indices, std::vector<ObservationMask> masks) {
  if (masks.size() != indices.size()) throw Error(ErrorKind::InvalidInput, "need one mask per selected instance");
  Dataset data;
  data.ids = world.truth.ids();
  for (const auto& f : world.features) {
    Matrix sel(f.rows(), static_cast<Eigen::Index>(indices.size()));
    for (std::size_t i = 0; i < indices.size(); ++i) sel.col(static_cast<Eigen::Index>(i)) = f.col(indices[i]);
    data.features.push_back(std::move(sel));
  }
  data.masks = std::move(masks);
  return data;
}

Dataset Dataset::completed() const {
  Dataset out = *this;
  for (auto& m : out.masks) m = ObservationMask::full(modality_count());
  return out;
}

Vector encode_vector(const Matrix& projection, const Vector& features) {
  if (projection.cols() != features.size())
    throw Error(ErrorKind::InvalidInput, "encoder input dimension does not match the features");
  const Vector z = projection * features;
  const double norm = z.norm();
  if (!(norm > 0.0) || !std::isfinite(norm))
    throw Error(ErrorKind::DegenerateEmbedding, "encoder produced a zero or non-finite vector");
  return z / norm;
}

ObservedInstance encode(const LinearEncoder& encoder, const Dataset& data, int i) {
  if (encoder.modality_count() != data.modality_count())
    throw Error(ErrorKind::InvalidInput, "encoder and dataset disagree on the number of modalities");
  std::vector<std::optional<Vector>> slots(static_cast<std::size_t>(data.modality_count()));
  for (int m : data.masks[static_cast<std::size_t>(i)].observed())
    slots[static_cast<std::size_t>(m)] =
        encode_vector(encoder.projections[static_cast<std::size_t>(m)], data.features[static_cast<std::size_t>(m)].col(i));
  return ObservedInstance(std::move(slots));
}

GenerativeTracker::GenerativeTracker(int modalities, double decay, MStepOptions options)
    : running_(static_cast<std::size_t>(modalities)), decay_(decay), options_(options) {}

void GenerativeTracker::update(GenerativeParams& params, const std::vector<ObservedInstance>& batch,
                               const std::vector<Posterior>& posteriors, std::vector<std::string>* warnings) {
  const Eigen::Index d = params.embed_dim();
  const int r = params.latent_dim();
  for (int m = 0; m < params.modality_count(); ++m) {
    ModalityStats stats(d, r);
    for (std::size_t i = 0; i < batch.size(); ++i)
      if (batch[i].observes(m)) stats.add(batch[i].at(m), posteriors[i]);
    if (stats.count == 0.0) continue;
    auto& slot = running_[static_cast<std::size_t>(m)];
    if (slot) slot->blend(stats, decay_);
    else slot = stats;
    try {
      params.set_modality(m, m_step_from_stats(*slot, params.modality(m), options_).params);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::RankDeficient) throw;
      if (warnings) warnings->push_back("kept previous " + params.modality(m).id + " block: " + e.what());
    }
  }
}

GenerativeParams warmup(const Dataset& complete, const LinearEncoder& encoder, const TrainConfig& config) {
  check_config(config);
  check_dataset(complete, "warm-up data");
  const int k = complete.modality_count();
  if (k < 2) throw Error(ErrorKind::InvalidWarmupData, "warm-up needs at least two modalities to hide one");
  for (const auto& m : complete.masks)
    if (!m.is_full()) throw Error(ErrorKind::InvalidWarmupData, "warm-up data must be fully observed");
  if (complete.size() < 2) throw Error(ErrorKind::InvalidWarmupData, "warm-up data needs at least two instances");

  Dataset masked = complete;
  Engine rng = make_stream(config.seed, "warmup_masks");
  std::uniform_int_distribution<int> pick(0, k - 1);
  for (auto& m : masked.masks) {
    const int hidden = pick(rng);
    std::vector<int> kept;
    for (int s = 0; s < k; ++s)
      if (s != hidden) kept.push_back(s);
    m = ObservationMask(k, kept);
  }
  const auto encoded = encode_all(encoder, masked);
  GenerativeParams params = initialize_params(encoded, config.latent_dim, complete.ids);
  GenerativeTracker tracker(k, config.ema_decay, config.m_step);
  for (int epoch = 0; epoch < config.warmup_epochs; ++epoch) {
    const auto order = shuffled(masked.size(), config.seed, "warmup_order", static_cast<std::uint64_t>(epoch));
    for (const auto& idx : batches_of(order, config.batch_size)) {
      std::vector<ObservedInstance> batch;
      std::vector<Posterior> posts;
      for (int i : idx) {
        batch.push_back(encoded[static_cast<std::size_t>(i)]);
        posts.push_back(posterior_infer(params, batch.back()));
      }
      tracker.update(params, batch, posts);
    }
  }
  return params;
}

TrainReport train(const Dataset& train_data, const Dataset& heldout, const TrainConfig& config,
                  const Dataset* warmup_data, const LinearEncoder* initial) {
  check_config(config);
  check_dataset(train_data, "training data");
  check_dataset(heldout, "held-out data");
  const int k = train_data.modality_count();
  if (heldout.modality_count() != k) throw Error(ErrorKind::InvalidInput, "held-out data has a different modality count");
  if (train_data.size() < 2 || heldout.size() < 1)
    throw Error(ErrorKind::InvalidInput, "training needs at least two instances and a non-empty held-out split");
  std::vector<std::string> starved;
  for (int m = 0; m < k; ++m) {
    const bool seen = std::any_of(train_data.masks.begin(), train_data.masks.end(),
                                  [m](const ObservationMask& mask) { return mask.contains(m); });
    if (!seen) starved.push_back(train_data.ids[static_cast<std::size_t>(m)]);
  }
  if (!starved.empty()) {
    std::string names;
    for (const auto& s : starved) names += (names.empty() ? "" : ", ") + s;
    throw Error(ErrorKind::InsufficientCoverage, "modalities never observed in training data: " + names);
  }

  TrainReport report;
  if (initial) {
    report.encoder = *initial;
  } else {
    std::vector<int> dims;
    for (const auto& f : train_data.features) dims.push_back(static_cast<int>(f.rows()));
    report.encoder = LinearEncoder::random(dims, config.embed_dim, config.seed);
  }
  if (report.encoder.modality_count() != k) throw Error(ErrorKind::InvalidInput, "encoder modality count mismatch");

  if (warmup_data && config.warmup_epochs > 0) {
    report.params = warmup(*warmup_data, report.encoder, config);
  } else {
    report.params = initialize_params(encode_all(report.encoder, train_data), config.latent_dim, train_data.ids);
  }
  if (config.epochs == 0) return report;

  const Eigen::Index d = report.params.embed_dim();
  if (config.matching_enabled) report.head = MatchingHead{Vector::Zero(d), 0.0};
  GenerativeTracker tracker(k, config.ema_decay, config.m_step);
  LossConfig loss_config{config.tau, config.tau_prime, config.alpha, config.seed};
  // The matching term is a log-likelihood; descending L_rep means ascending it.
  loss_config.alpha = -config.alpha;
  const double step = config.step_size();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled(train_data.size(), config.seed, "train_order", static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    int loss_batches = 0;
    for (const auto& idx : batches_of(order, config.batch_size)) {
      std::vector<ObservedInstance> batch;
      std::vector<Posterior> posts;
      for (int i : idx) {
        batch.push_back(encode(report.encoder, train_data, i));
        posts.push_back(posterior_infer(report.params, batch.back()));
      }
      tracker.update(report.params, batch, posts, &report.warnings);

      // completed stacks; `slot_of_col` maps stack columns back to modality slots
      std::vector<LossItem> items;
      std::vector<std::vector<int>> slot_of_col;
      std::vector<int> owner;
      for (std::size_t b = 0; b < idx.size(); ++b) {
        const ObservationMask mask = batch[b].mask();
        std::vector<int> slots;
        for (int m = 0; m < k; ++m)
          if (mask.contains(m) || config.impute) slots.push_back(m);
        if (slots.size() < 2) {
          ++report.skipped_instances;
          continue;
        }
        LossItem item;
        item.stack.resize(d, static_cast<Eigen::Index>(slots.size()));
        for (std::size_t c = 0; c < slots.size(); ++c) {
          const int m = slots[c];
          const bool seen = mask.contains(m);
          item.stack.col(static_cast<Eigen::Index>(c)) =
              seen ? batch[b].at(m) : impute(report.params, posts[b], m).normalized();
          item.observed.push_back(seen);
        }
        const Vector sigma = decompose(item.stack).sigma;
        const double gap = sigma(0) - (sigma.size() > 1 ? sigma(1) : 0.0);
        if (gap < kSkipGap || !item.stack.allFinite()) {
          ++report.skipped_instances;
          report.warnings.push_back("epoch " + std::to_string(epoch) + ": skipped instance " +
                                    std::to_string(idx[b]) + " with degenerate spectrum");
          continue;
        }
        items.push_back(std::move(item));
        slot_of_col.push_back(std::move(slots));
        owner.push_back(idx[b]);
      }
      if (items.size() < 2) continue;

      const LossGradient grad = rep_loss_grad(items, loss_config, report.head ? &*report.head : nullptr);
      loss_sum += grad.loss.total;
      ++loss_batches;

      std::vector<Matrix> enc_grad;
      for (const auto& a : report.encoder.projections) enc_grad.push_back(Matrix::Zero(a.rows(), a.cols()));
      for (std::size_t j = 0; j < items.size(); ++j) {
        for (std::size_t c = 0; c < slot_of_col[j].size(); ++c) {
          if (!items[j].observed[c]) continue;  // imputed columns are constants
          const int m = slot_of_col[j][c];
          const auto& a = report.encoder.projections[static_cast<std::size_t>(m)];
          const Vector x = train_data.features[static_cast<std::size_t>(m)].col(owner[j]);
          const Vector z = items[j].stack.col(static_cast<Eigen::Index>(c));
          const Vector g = grad.stacks[j].col(static_cast<Eigen::Index>(c));
          // d normalize(Ax) = (I − z zᵀ) dA x / ‖Ax‖
          const Vector back = (g - z * z.dot(g)) / (a * x).norm();
          enc_grad[static_cast<std::size_t>(m)].noalias() += back * x.transpose();
        }
      }
      for (int m = 0; m < k; ++m)
        report.encoder.projections[static_cast<std::size_t>(m)] -= step * enc_grad[static_cast<std::size_t>(m)];
      if (report.head) {
        const HeadGradient hg = matching_head_gradient(matching_samples(items, config.seed), *report.head);
        report.head->weight += step * config.alpha * hg.weight;
        report.head->bias += step * config.alpha * hg.bias;
      }
      ++report.steps;
    }
    report.loss.push_back(loss_batches > 0 ? loss_sum / loss_batches : std::nan(""));
    const HeldoutMetrics metrics = evaluate(report.encoder, report.params, heldout, config);
    report.loglik.push_back(metrics.loglik);
    report.recall1.push_back(metrics.r1);
    report.recall5.push_back(metrics.r5);
    report.recall10.push_back(metrics.r10);
  }
  return report;
}

double recall_at_k(const Matrix& queries, const Matrix& gallery, int k, const std::vector<int>& mates) {
  const Eigen::Index n = gallery.cols();
  if (k < 1 || k > n)
    throw Error(ErrorKind::InvalidK, "k = " + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  if (queries.rows() != gallery.rows()) throw Error(ErrorKind::InvalidInput, "query and gallery dimensions differ");
  if (mates.empty() && queries.cols() != n)
    throw Error(ErrorKind::InvalidInput, "query and gallery counts differ");
  if (!mates.empty() && mates.size() != static_cast<std::size_t>(queries.cols()))
    throw Error(ErrorKind::InvalidInput, "need one mate per query");
  if (queries.cols() == 0) return 0.0;
  const Matrix sims = queries.transpose() * gallery;
  int hits = 0;
  for (Eigen::Index q = 0; q < queries.cols(); ++q) {
    const Eigen::Index mate = mates.empty() ? q : mates[static_cast<std::size_t>(q)];
    if (mate < 0 || mate >= n) throw Error(ErrorKind::InvalidInput, "mate index out of range");
    const double target = sims(q, mate);
    // rank = gallery items strictly ahead of the mate
    int ahead = 0;
    for (Eigen::Index g = 0; g < n && ahead < k; ++g) {
      const double s = sims(q, g);
      if (s > target || (s == target && g < mate)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.cols());
}

}  // namespace calign
