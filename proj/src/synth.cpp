#include "calign/synth.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>

#include "calign/error.hpp"
#include "calign/rng.hpp"

namespace calign {
namespace {

double parse_number(std::string_view text, std::string_view what) {
  std::string owned(text);
  char* end = nullptr;
  const double value = std::strtod(owned.c_str(), &end);
  if (owned.empty() || end != owned.c_str() + owned.size() || !std::isfinite(value))
    throw Error(ErrorKind::Parse, "mask pattern: bad " + std::string(what) + " '" + owned + "'");
  return value;
}

int parse_int(std::string_view text, std::string_view what) {
  int value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorKind::Parse, "mask pattern: bad " + std::string(what) + " '" + std::string(text) + "'");
  return value;
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

ObservationMask drop_slot(int k, int slot) {
  std::vector<int> kept;
  for (int m = 0; m < k; ++m)
    if (m != slot) kept.push_back(m);
  return ObservationMask(k, kept);
}

Vector unit(const Vector& v) {
  const double n = v.norm();
  if (!(n > 0.0)) throw Error(ErrorKind::DegenerateEmbedding, "cannot normalize a zero vector");
  return v / n;
}

}  // namespace

std::vector<std::string> default_modality_ids(int k) {
  static const char* const kNames[] = {"vision", "text", "audio", "subtitle"};
  std::vector<std::string> ids;
  for (int m = 0; m < k; ++m) ids.push_back(m < 4 ? kNames[m] : "modality" + std::to_string(m));
  return ids;
}

int SynthWorld::train_count() const {
  const int n = static_cast<int>(std::floor(spec.train_fraction * spec.instances));
  return std::clamp(n, 1, spec.instances - 1);
}

std::vector<int> SynthWorld::train_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(train_count()));
  for (int i = 0; i < train_count(); ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

std::vector<int> SynthWorld::heldout_indices() const {
  std::vector<int> idx;
  for (int i = train_count(); i < spec.instances; ++i) idx.push_back(i);
  return idx;
}

Matrix SynthWorld::stack(int i) const {
  Matrix out(spec.embed_dim, spec.modalities);
  for (int m = 0; m < spec.modalities; ++m) out.col(m) = embeddings[static_cast<std::size_t>(m)].col(i);
  return out;
}

Matrix SynthWorld::unit_stack(int i) const {
  Matrix stack(spec.embed_dim, spec.modalities);
  for (int m = 0; m < spec.modalities; ++m) stack.col(m) = unit(embeddings[static_cast<std::size_t>(m)].col(i));
  return stack;
}

SynthWorld make_world(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.latent_dim < 1 || spec.embed_dim < 1 || spec.raw_dim < 1)
    throw Error(ErrorKind::InvalidSpec, "world dimensions must be positive");
  if (spec.latent_dim > spec.embed_dim)
    throw Error(ErrorKind::InvalidSpec, "latent_dim " + std::to_string(spec.latent_dim) +
                                            " exceeds embed_dim " + std::to_string(spec.embed_dim));
  if (spec.latent_dim > spec.raw_dim)
    throw Error(ErrorKind::InvalidSpec, "latent_dim exceeds raw_dim");
  if (spec.modalities < 2) throw Error(ErrorKind::InvalidSpec, "a world needs at least two modalities");
  if (spec.instances < 10) throw Error(ErrorKind::InvalidSpec, "a world needs at least 10 instances");
  if (!(spec.signal > 0.0) || spec.noise < 0.0 || spec.raw_noise < 0.0 || spec.spread < 0.0 ||
      spec.offset_scale < 0.0)
    throw Error(ErrorKind::InvalidSpec, "signal must be positive and noise levels nonnegative");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw Error(ErrorKind::InvalidSpec, "train_fraction must lie in (0, 1)");

  SynthWorld world;
  world.spec = spec;
  world.seed = seed;
  const int r = spec.latent_dim, d = spec.embed_dim, k = spec.modalities, n = spec.instances;
  const auto ids = default_modality_ids(k);

  Engine param_rng = make_stream(seed, "world_params");
  const Matrix shared = standard_normal(param_rng, d, r);
  std::vector<ModalityParams> blocks;
  for (int m = 0; m < k; ++m) {
    const Matrix draw = shared + spec.spread * standard_normal(param_rng, d, r);
    Eigen::HouseholderQR<Matrix> qr(draw);
    Matrix q = qr.householderQ() * Matrix::Identity(d, r);
    const Matrix rfac = qr.matrixQR().topLeftCorner(r, r).triangularView<Eigen::Upper>();
    for (int j = 0; j < r; ++j)
      if (rfac(j, j) < 0.0) q.col(j) = -q.col(j);
    ModalityParams block;
    block.id = ids[static_cast<std::size_t>(m)];
    block.loading = spec.signal * q;
    block.offset = spec.offset_scale * random_unit_vector(param_rng, d);
    block.noise_std = std::max(spec.noise, 1e-6);
    blocks.push_back(std::move(block));
  }
  world.truth = GenerativeParams(r, std::move(blocks));

  Engine latent_rng = make_stream(seed, "world_latents");
  world.latents = standard_normal(latent_rng, r, n);

  Engine noise_rng = make_stream(seed, "world_noise");
  for (int m = 0; m < k; ++m) {
    const auto& block = world.truth.modality(m);
    Matrix z = block.loading * world.latents;
    z.colwise() += block.offset;
    if (spec.noise > 0.0) z += spec.noise * standard_normal(noise_rng, d, n);
    world.embeddings.push_back(std::move(z));
  }

  Engine raw_rng = make_stream(seed, "world_raw");
  for (int m = 0; m < k; ++m) {
    Matrix basis = random_orthonormal(raw_rng, spec.raw_dim, r);
    Matrix x = basis * world.latents;
    if (spec.raw_noise > 0.0) x += spec.raw_noise * standard_normal(raw_rng, spec.raw_dim, n);
    world.raw_bases.push_back(std::move(basis));
    world.features.push_back(std::move(x));
  }
  return world;
}

MaskPattern MaskPattern::parse(std::string_view text) {
  const auto parts = split(text, ':');
  MaskPattern p;
  const std::string_view name = parts.front();
  if (name == "full" || name == "vt" || name == "at") {
    if (parts.size() != 1) throw Error(ErrorKind::Parse, "mask pattern '" + std::string(name) + "' takes no arguments");
    p.kind = name == "full" ? Kind::Full : name == "vt" ? Kind::VisionText : Kind::AudioText;
    return p;
  }
  if (name == "mix") {
    if (parts.size() != 2) throw Error(ErrorKind::Parse, "mask pattern 'mix' expects mix:P");
    p.kind = Kind::Mix;
    p.fraction = parse_number(parts[1], "mix fraction");
    if (p.fraction < 0.0 || p.fraction > 1.0) throw Error(ErrorKind::Parse, "mix fraction must lie in [0, 1]");
    return p;
  }
  if (name == "random") {
    if (parts.size() != 3) throw Error(ErrorKind::Parse, "mask pattern 'random' expects random:Q:MIN_OBS");
    p.kind = Kind::Random;
    p.fraction = parse_number(parts[1], "drop probability");
    p.min_observed = parse_int(parts[2], "min_obs");
    if (p.fraction < 0.0 || p.fraction > 1.0) throw Error(ErrorKind::Parse, "drop probability must lie in [0, 1]");
    if (p.min_observed < 1) throw Error(ErrorKind::Parse, "min_obs must be at least 1");
    return p;
  }
  throw Error(ErrorKind::Parse, "unknown mask pattern '" + std::string(text) + "'");
}

std::string MaskPattern::to_string() const {
  char buf[64];
  switch (kind) {
    case Kind::Full: return "full";
    case Kind::VisionText: return "vt";
    case Kind::AudioText: return "at";
    case Kind::Mix: std::snprintf(buf, sizeof buf, "mix:%.17g", fraction); return buf;
    case Kind::Random: std::snprintf(buf, sizeof buf, "random:%.17g:%d", fraction, min_observed); return buf;
  }
  return "full";
}

std::vector<ObservationMask> make_masks(const MaskPattern& pattern, int k, int count, std::uint64_t seed,
                                        std::string_view stream) {
  using Kind = MaskPattern::Kind;
  const bool needs_audio = pattern.kind == Kind::AudioText ||
                           (pattern.kind == Kind::Mix && pattern.fraction < 1.0);
  if (needs_audio && k <= kAudioSlot)
    throw Error(ErrorKind::InvalidSpec, "mask pattern '" + pattern.to_string() + "' needs an audio slot");
  if (pattern.kind == Kind::Random && pattern.min_observed > k)
    throw Error(ErrorKind::InvalidSpec, "min_obs exceeds the number of modalities");

  const ObservationMask vt = k > kAudioSlot ? drop_slot(k, kAudioSlot) : ObservationMask::full(k);
  const ObservationMask at = k > kAudioSlot ? drop_slot(k, kVisionSlot) : ObservationMask::full(k);
  Engine rng = make_stream(seed, stream);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<ObservationMask> masks;
  masks.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    switch (pattern.kind) {
      case Kind::Full: masks.push_back(ObservationMask::full(k)); break;
      case Kind::VisionText: masks.push_back(vt); break;
      case Kind::AudioText: masks.push_back(at); break;
      case Kind::Mix: masks.push_back(coin(rng) < pattern.fraction ? vt : at); break;
      case Kind::Random: {
        std::vector<bool> flags(static_cast<std::size_t>(k));
        int observed = 0;
        for (int m = 0; m < k; ++m) {
          flags[static_cast<std::size_t>(m)] = coin(rng) >= pattern.fraction;
          observed += flags[static_cast<std::size_t>(m)] ? 1 : 0;
        }
        while (observed < pattern.min_observed) {
          std::uniform_int_distribution<int> pick(0, k - 1);
          const int m = pick(rng);
          if (!flags[static_cast<std::size_t>(m)]) {
            flags[static_cast<std::size_t>(m)] = true;
            ++observed;
          }
        }
        masks.push_back(ObservationMask::from_flags(flags));
        break;
      }
    }
  }
  return masks;
}

std::vector<ObservedInstance> observed_data(const SynthWorld& world, const std::vector<int>& indices,
                                            const std::vector<ObservationMask>& masks) {
  if (masks.size() != indices.size())
    throw Error(ErrorKind::InvalidInput, "need one mask per selected instance");
  std::vector<ObservedInstance> data;
  data.reserve(indices.size());
  const int k = world.modality_count();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (masks[i].slots() != k) throw Error(ErrorKind::InvalidMask, "mask slot count does not match the world");
    std::vector<std::optional<Vector>> slots(static_cast<std::size_t>(k));
    for (int m : masks[i].observed()) slots[static_cast<std::size_t>(m)] = world.embeddings[static_cast<std::size_t>(m)].col(indices[i]);
    data.emplace_back(std::move(slots));
  }
  return data;
}

ImputationMse imputation_mse(const SynthWorld& world, const GenerativeParams& params,
                             const std::vector<int>& indices, const std::vector<ObservationMask>& masks,
                             std::uint64_t seed) {
  const int k = world.modality_count();
  if (params.modality_count() != k) throw Error(ErrorKind::InvalidInput, "params do not match the world");
  const auto data = observed_data(world, indices, masks);
  Engine rng = make_stream(seed, "random_baseline");
  std::vector<double> sum(static_cast<std::size_t>(k), 0.0), random_sum(static_cast<std::size_t>(k), 0.0);
  std::vector<int> count(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (masks[i].is_full()) continue;
    const Posterior post = posterior_infer(params, data[i]);
    for (int m : masks[i].missing()) {
      const Vector truth = unit(world.embeddings[static_cast<std::size_t>(m)].col(indices[i]));
      const Vector guess = unit(impute(params, post, m));
      const Vector random = random_unit_vector(rng, truth.size());
      sum[static_cast<std::size_t>(m)] += (truth - guess).squaredNorm();
      random_sum[static_cast<std::size_t>(m)] += (truth - random).squaredNorm();
      ++count[static_cast<std::size_t>(m)];
    }
  }
  ImputationMse out;
  double pooled = 0.0;
  int pooled_count = 0;
  for (int m = 0; m < k; ++m) {
    ModalityMse row;
    row.id = params.modality(m).id;
    row.occurrences = count[static_cast<std::size_t>(m)];
    if (row.occurrences > 0) {
      row.mse = sum[static_cast<std::size_t>(m)] / row.occurrences;
      row.random_mse = random_sum[static_cast<std::size_t>(m)] / row.occurrences;
      pooled += random_sum[static_cast<std::size_t>(m)];
      pooled_count += row.occurrences;
    }
    out.per_modality.push_back(std::move(row));
  }
  if (pooled_count > 0) out.random_baseline_mse = pooled / pooled_count;
  return out;
}

ShiftSummary shift_experiment(const SynthWorld& world, const GenerativeParams& params,
                              const std::vector<int>& indices, const std::vector<ObservationMask>& masks,
                              int trials, std::uint64_t seed, bool random_imputation) {
  const int k = world.modality_count();
  if (k < 3) throw Error(ErrorKind::InvalidSpec, "shift experiments need at least three modalities");
  if (params.modality_count() != k) throw Error(ErrorKind::InvalidInput, "params do not match the world");
  if (masks.size() != indices.size()) throw Error(ErrorKind::InvalidInput, "need one mask per selected instance");
  ShiftSummary summary;
  summary.requested = trials;
  Engine rng = make_stream(seed, "shift_random_imputation");
  int improved = 0;
  for (std::size_t i = 0; i < indices.size() && summary.evaluated < trials; ++i) {
    const ObservationMask& mask = masks[i];
    if (mask.is_full()) {
      ++summary.skipped_complete;
      continue;
    }
    const EmbeddingStack stack(world.unit_stack(indices[i]), world.truth.ids());
    std::map<int, Vector> imputed;
    if (random_imputation) {
      for (int m : mask.missing()) imputed[m] = random_unit_vector(rng, stack.dim());
    } else {
      const Posterior post = posterior_infer(params, ObservedInstance::from_columns(world.stack(indices[i]), mask));
      for (int m : mask.missing()) imputed[m] = impute(params, post, m);
    }
    try {
      ShiftTrial trial{indices[i], mask, calibrated_shift(stack, mask, imputed)};
      summary.mean_delta_missing += trial.shift.delta_missing;
      summary.mean_delta_calibrated += trial.shift.delta_calibrated;
      improved += trial.shift.improved ? 1 : 0;
      summary.trials.push_back(std::move(trial));
      ++summary.evaluated;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::DegenerateSpectrum) throw;
      ++summary.skipped_degenerate;
    }
  }
  if (summary.evaluated > 0) {
    summary.mean_delta_missing /= summary.evaluated;
    summary.mean_delta_calibrated /= summary.evaluated;
    summary.improved_fraction = static_cast<double>(improved) / summary.evaluated;
  }
  return summary;
}

}  // namespace calign
