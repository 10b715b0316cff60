#include "calign/latent_model.hpp"

#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "calign/error.hpp"
#include "calign/parallel.hpp"

namespace calign {
namespace {

constexpr double kLog2Pi = 1.8378770664093454836;  // ln(2π)

void require(bool ok, ErrorKind kind, const std::string& message) {
  if (!ok) throw Error(kind, message);
}

// Latent-space precision P = I + Σ_Ω σ^-2 WᵀW and b = Σ_Ω σ^-2 Wᵀ(z − μ).
struct LatentSystem {
  Matrix precision;
  Vector rhs;
};

LatentSystem latent_system(const GenerativeParams& params, const ObservedInstance& obs) {
  const int r = params.latent_dim();
  LatentSystem sys{Matrix::Identity(r, r), Vector::Zero(r)};
  for (int slot : obs.mask().observed()) {
    const ModalityParams& mp = params.modality(slot);
    const double inv_var = 1.0 / (mp.noise_std * mp.noise_std);
    sys.precision.noalias() += inv_var * (mp.loading.transpose() * mp.loading);
    sys.rhs.noalias() += inv_var * (mp.loading.transpose() * (obs.at(slot) - mp.offset));
  }
  sys.precision = 0.5 * (sys.precision + sys.precision.transpose()).eval();
  return sys;
}

void check_instance(const GenerativeParams& params, const ObservedInstance& obs) {
  require(obs.slots() == params.modality_count(), ErrorKind::InvalidMask,
          "instance has " + std::to_string(obs.slots()) + " slots, model has " +
              std::to_string(params.modality_count()));
  require(obs.dim() == params.embed_dim(), ErrorKind::InvalidInput,
          "instance embedding dimension does not match the model");
}

std::string scales_message(const GenerativeParams& params, const ObservationMask& mask) {
  std::ostringstream os;
  os << "posterior precision is not positive definite; modality noise scales:";
  for (int slot : mask.observed())
    os << " " << params.modality(slot).id << "=" << params.modality(slot).noise_std;
  return os.str();
}

// Stacked W^Ω, μ^Ω, z^Ω and the diagonal of Σ^Ω for the dense oracles.
struct StackedBlocks {
  Matrix loading;
  Vector offset;
  Vector value;
  Vector noise_var;
};

StackedBlocks stack_blocks(const GenerativeParams& params, const ObservedInstance& obs) {
  const auto& observed = obs.mask().observed();
  const Eigen::Index d = params.embed_dim();
  const Eigen::Index total = d * static_cast<Eigen::Index>(observed.size());
  StackedBlocks s{Matrix(total, params.latent_dim()), Vector(total), Vector(total), Vector(total)};
  Eigen::Index row = 0;
  for (int slot : observed) {
    const ModalityParams& mp = params.modality(slot);
    s.loading.middleRows(row, d) = mp.loading;
    s.offset.segment(row, d) = mp.offset;
    s.value.segment(row, d) = obs.at(slot);
    s.noise_var.segment(row, d).setConstant(mp.noise_std * mp.noise_std);
    row += d;
  }
  return s;
}

double log_det_spd(const Eigen::LLT<Matrix>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

// ---------------------------------------------------------------------------
// GenerativeParams

GenerativeParams::GenerativeParams(int latent_dim, std::vector<ModalityParams> modalities)
    : latent_dim_(latent_dim), modalities_(std::move(modalities)) {
  validate();
}

void GenerativeParams::validate() const {
  require(latent_dim_ >= 1, ErrorKind::InvalidInput, "latent dimension must be >= 1");
  require(!modalities_.empty(), ErrorKind::InvalidInput, "model needs at least one modality");
  std::set<std::string> seen;
  const Eigen::Index d = modalities_.front().offset.size();
  require(d >= 1, ErrorKind::InvalidInput, "embedding dimension must be >= 1");
  for (const auto& m : modalities_) {
    require(seen.insert(m.id).second, ErrorKind::InvalidInput, "duplicate modality id '" + m.id + "'");
    require(m.loading.rows() == d && m.loading.cols() == latent_dim_, ErrorKind::InvalidInput,
            "modality '" + m.id + "': loading must be d x r");
    require(m.offset.size() == d, ErrorKind::InvalidInput,
            "modality '" + m.id + "': offset must have dimension d");
    require(m.loading.allFinite() && m.offset.allFinite(), ErrorKind::InvalidInput,
            "modality '" + m.id + "': non-finite parameters");
    require(std::isfinite(m.noise_std) && m.noise_std > 0.0, ErrorKind::InvariantViolation,
            "modality '" + m.id + "': noise std must be positive");
  }
}

Eigen::Index GenerativeParams::embed_dim() const {
  return modalities_.empty() ? 0 : modalities_.front().offset.size();
}

const ModalityParams& GenerativeParams::modality(int slot) const {
  require(slot >= 0 && slot < modality_count(), ErrorKind::InvalidModality,
          "modality slot " + std::to_string(slot) + " out of range");
  return modalities_[static_cast<std::size_t>(slot)];
}

std::vector<std::string> GenerativeParams::ids() const {
  std::vector<std::string> out;
  for (const auto& m : modalities_) out.push_back(m.id);
  return out;
}

int GenerativeParams::slot_of(const std::string& id) const {
  for (std::size_t i = 0; i < modalities_.size(); ++i)
    if (modalities_[i].id == id) return static_cast<int>(i);
  throw Error(ErrorKind::InvalidModality, "unknown modality id '" + id + "'");
}

void GenerativeParams::set_modality(int slot, ModalityParams params) {
  const ModalityParams& old = modality(slot);
  require(params.id == old.id, ErrorKind::InvalidInput, "set_modality cannot rename a modality");
  ModalityParams saved = std::move(modalities_[static_cast<std::size_t>(slot)]);
  modalities_[static_cast<std::size_t>(slot)] = std::move(params);
  try {
    validate();
  } catch (...) {
    modalities_[static_cast<std::size_t>(slot)] = std::move(saved);
    throw;
  }
}

// ---------------------------------------------------------------------------
// ObservedInstance

ObservedInstance::ObservedInstance(std::vector<std::optional<Vector>> slots)
    : slots_(std::move(slots)) {
  bool any = false;
  for (const auto& s : slots_) {
    if (!s) continue;
    require(s->size() > 0 && s->allFinite(), ErrorKind::InvalidInput,
            "observed embedding must be non-empty and finite");
    if (!any) dim_ = s->size();
    require(s->size() == dim_, ErrorKind::InvalidInput, "observed embeddings differ in dimension");
    any = true;
  }
  require(any, ErrorKind::InvalidMask, "instance observes no modality");
  std::vector<bool> flags(slots_.size());
  for (std::size_t i = 0; i < slots_.size(); ++i) flags[i] = slots_[i].has_value();
  mask_ = ObservationMask::from_flags(flags);
}

ObservedInstance ObservedInstance::from_columns(const Matrix& stack, const ObservationMask& mask) {
  require(mask.slots() == stack.cols(), ErrorKind::InvalidMask,
          "mask slot count does not match the stack");
  std::vector<std::optional<Vector>> slots(static_cast<std::size_t>(stack.cols()));
  for (int slot : mask.observed()) slots[static_cast<std::size_t>(slot)] = Vector(stack.col(slot));
  return ObservedInstance(std::move(slots));
}

bool ObservedInstance::observes(int slot) const {
  return slot >= 0 && slot < slots() && slots_[static_cast<std::size_t>(slot)].has_value();
}

const Vector& ObservedInstance::at(int slot) const {
  require(observes(slot), ErrorKind::InvalidModality,
          "slot " + std::to_string(slot) + " is not observed");
  return *slots_[static_cast<std::size_t>(slot)];
}

// ---------------------------------------------------------------------------
// Sampling

SampledInstance sample_instance(const GenerativeParams& params, std::uint64_t seed) {
  Engine engine = make_stream(seed, "sample_instance");
  return sample_instance(params, engine);
}

SampledInstance sample_instance(const GenerativeParams& params, Engine& engine) {
  SampledInstance out;
  out.beta = standard_normal(engine, params.latent_dim());
  for (const auto& mp : params.modalities()) {
    const Vector noise = standard_normal(engine, mp.offset.size());
    out.embeddings.push_back(mp.loading * out.beta + mp.offset + mp.noise_std * noise);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Posterior

Posterior posterior_infer(const GenerativeParams& params, const ObservedInstance& obs) {
  check_instance(params, obs);
  const LatentSystem sys = latent_system(params, obs);
  Eigen::LLT<Matrix> llt(sys.precision);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::Conditioning, scales_message(params, obs.mask()));
  const int r = params.latent_dim();
  Posterior post;
  post.cov = llt.solve(Matrix::Identity(r, r));
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  post.mean = llt.solve(sys.rhs);
  return post;
}

Posterior posterior_oracle(const GenerativeParams& params, const ObservedInstance& obs,
                           Eigen::Index max_dim) {
  check_instance(params, obs);
  const Eigen::Index total = params.embed_dim() * obs.mask().observed_count();
  require(total <= max_dim, ErrorKind::OracleTooLarge,
          "oracle dimension " + std::to_string(total) + " exceeds guard " + std::to_string(max_dim));
  const StackedBlocks s = stack_blocks(params, obs);
  Matrix cov_z = s.loading * s.loading.transpose();
  cov_z.diagonal() += s.noise_var;
  Eigen::LLT<Matrix> llt(cov_z);
  require(llt.info() == Eigen::Success, ErrorKind::Conditioning, "joint covariance is not SPD");
  const int r = params.latent_dim();
  // Σ_βz Σ_z^-1 with Σ_βz = Wᵀ
  const Matrix gain = llt.solve(s.loading).transpose();
  Posterior post;
  post.cov = Matrix::Identity(r, r) - gain * s.loading;
  post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  post.mean = gain * (s.value - s.offset);
  return post;
}

Vector conditional_mean_oracle(const GenerativeParams& params, const ObservedInstance& obs,
                               int target, Eigen::Index max_dim) {
  check_instance(params, obs);
  const Eigen::Index total = params.embed_dim() * obs.mask().observed_count();
  require(total <= max_dim, ErrorKind::OracleTooLarge,
          "oracle dimension " + std::to_string(total) + " exceeds guard " + std::to_string(max_dim));
  const ModalityParams& tp = params.modality(target);
  const StackedBlocks s = stack_blocks(params, obs);
  Matrix cov_z = s.loading * s.loading.transpose();
  cov_z.diagonal() += s.noise_var;
  // Cov(z^target, z^Ω) = W^target W^Ωᵀ, plus the noise block when the target
  // itself is observed.
  Matrix cross = tp.loading * s.loading.transpose();
  if (obs.observes(target)) {
    Eigen::Index row = 0;
    for (int slot : obs.mask().observed()) {
      if (slot == target) cross.middleCols(row, tp.offset.size()).diagonal().array() += tp.noise_std * tp.noise_std;
      row += params.embed_dim();
    }
  }
  Eigen::LLT<Matrix> llt(cov_z);
  require(llt.info() == Eigen::Success, ErrorKind::Conditioning, "joint covariance is not SPD");
  return tp.offset + cross * llt.solve(s.value - s.offset);
}

// ---------------------------------------------------------------------------
// M-step

ModalityStats::ModalityStats(Eigen::Index d, int r)
    : sum_z(Vector::Zero(d)),
      sum_mean(Vector::Zero(r)),
      sum_zm(Matrix::Zero(d, r)),
      sum_mm(Matrix::Zero(r, r)),
      sum_cov(Matrix::Zero(r, r)) {}

void ModalityStats::add(const Vector& z, const Posterior& post) {
  count += 1.0;
  sum_z += z;
  sum_mean += post.mean;
  sum_zm.noalias() += z * post.mean.transpose();
  sum_mm.noalias() += post.mean * post.mean.transpose();
  sum_cov += post.cov;
  sum_zz += z.squaredNorm();
}

void ModalityStats::blend(const ModalityStats& batch, double decay) {
  const double w = 1.0 - decay;
  count = decay * count + w * batch.count;
  sum_z = decay * sum_z + w * batch.sum_z;
  sum_mean = decay * sum_mean + w * batch.sum_mean;
  sum_zm = decay * sum_zm + w * batch.sum_zm;
  sum_mm = decay * sum_mm + w * batch.sum_mm;
  sum_cov = decay * sum_cov + w * batch.sum_cov;
  sum_zz = decay * sum_zz + w * batch.sum_zz;
}

namespace {

struct MeanLoading {
  Vector offset;
  Matrix loading;
  int sweeps = 0;
};

// μ ← (Σz − W Σm)/n with the current W, then W ← (Σ(z − μ)mᵀ)(ΣE[ββᵀ])^-1 with
// the new μ; repeated until the pair stops moving.
MeanLoading solve_mean_loading(const ModalityStats& stats, const Matrix& current_loading,
                               const Vector& current_offset, const MStepOptions& options,
                               const std::string& id) {
  const Matrix second = 0.5 * (stats.sum_second() + stats.sum_second().transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> es(second, Eigen::EigenvaluesOnly);
  const double lo = es.eigenvalues().minCoeff();
  const double hi = es.eigenvalues().maxCoeff();
  const double cond = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(cond <= options.max_condition)) {
    std::ostringstream os;
    os << "modality '" << id << "': second-moment sum is singular (condition number " << cond << ")";
    throw Error(ErrorKind::RankDeficient, os.str());
  }
  Eigen::LLT<Matrix> llt(second);
  MeanLoading out{current_offset, current_loading, 0};
  const int sweeps = std::max(options.max_sweeps, 1);
  for (int s = 0; s < sweeps; ++s) {
    const Vector offset = (stats.sum_z - out.loading * stats.sum_mean) / stats.count;
    const Matrix cross = stats.sum_zm - offset * stats.sum_mean.transpose();
    const Matrix loading = llt.solve(cross.transpose()).transpose();
    const double change = std::max((offset - out.offset).cwiseAbs().maxCoeff(),
                                   (loading - out.loading).cwiseAbs().maxCoeff());
    const double scale = 1.0 + std::max(offset.cwiseAbs().maxCoeff(), loading.cwiseAbs().maxCoeff());
    out.offset = offset;
    out.loading = loading;
    out.sweeps = s + 1;
    if (change <= options.sweep_tol * scale) break;
  }
  return out;
}

MStepResult finish(ModalityParams params, double sigma2, const MStepOptions& options, int sweeps) {
  MStepResult result;
  result.sweeps = sweeps;
  if (!(sigma2 >= options.sigma2_floor)) {
    sigma2 = options.sigma2_floor;
    result.degenerate = true;
  }
  params.noise_std = std::sqrt(sigma2);
  result.params = std::move(params);
  return result;
}

}  // namespace

namespace {

// Shared body of the data-driven M-step; `z_at(i)` / `post_at(i)` address the
// i-th member of the batch.
template <class ZAt, class PostAt>
MStepResult m_step_impl(std::size_t count, ZAt&& z_at, PostAt&& post_at, int slot,
                        const GenerativeParams& current, const MStepOptions& options) {
  const ModalityParams& cur = current.modality(slot);
  require(count >= 2, ErrorKind::InvalidInput, "m_step: batch needs at least two instances");
  const Eigen::Index d = current.embed_dim();
  ModalityStats stats(d, current.latent_dim());
  for (std::size_t i = 0; i < count; ++i) stats.add(z_at(i), post_at(i));
  const MeanLoading ml = solve_mean_loading(stats, cur.loading, cur.offset, options, cur.id);

  double residual = 0.0;
  for (std::size_t i = 0; i < count; ++i)
    residual += (z_at(i) - ml.offset - ml.loading * post_at(i).mean).squaredNorm();
  residual += (ml.loading.transpose() * ml.loading * stats.sum_cov).trace();
  const double sigma2 = residual / (stats.count * static_cast<double>(d));

  return finish(ModalityParams{cur.id, ml.loading, ml.offset, cur.noise_std}, sigma2, options, ml.sweeps);
}

}  // namespace

MStepResult m_step(std::span<const ObservedInstance> batch, std::span<const Posterior> posteriors,
                   int slot, const GenerativeParams& current, const MStepOptions& options) {
  const ModalityParams& cur = current.modality(slot);
  require(batch.size() == posteriors.size(), ErrorKind::InvalidInput,
          "m_step: one posterior per instance required");
  for (std::size_t i = 0; i < batch.size(); ++i)
    require(batch[i].observes(slot), ErrorKind::InvalidMask,
            "m_step: instance " + std::to_string(i) + " does not observe modality '" + cur.id + "'");
  return m_step_impl(
      batch.size(), [&](std::size_t i) -> const Vector& { return batch[i].at(slot); },
      [&](std::size_t i) -> const Posterior& { return posteriors[i]; }, slot, current, options);
}

MStepResult m_step_from_stats(const ModalityStats& stats, const ModalityParams& current,
                              const MStepOptions& options) {
  require(stats.count > 0.0, ErrorKind::InvalidInput, "m_step: empty statistics");
  const MeanLoading ml = solve_mean_loading(stats, current.loading, current.offset, options, current.id);
  const Matrix& w = ml.loading;
  const Vector& mu = ml.offset;
  const double d = static_cast<double>(mu.size());
  double residual = stats.sum_zz - 2.0 * mu.dot(stats.sum_z) + stats.count * mu.squaredNorm();
  residual -= 2.0 * (w.transpose() * (stats.sum_zm - mu * stats.sum_mean.transpose())).trace();
  residual += (w.transpose() * w * stats.sum_second()).trace();
  const double sigma2 = std::max(residual, 0.0) / (stats.count * d);
  return finish(ModalityParams{current.id, w, mu, current.noise_std}, sigma2, options, ml.sweeps);
}

double expected_complete_loglik(std::span<const ObservedInstance> batch,
                                std::span<const Posterior> posteriors, int slot,
                                const ModalityParams& candidate) {
  require(batch.size() == posteriors.size(), ErrorKind::InvalidInput,
          "one posterior per instance required");
  const double var = candidate.noise_std * candidate.noise_std;
  const double d = static_cast<double>(candidate.offset.size());
  const Matrix wtw = candidate.loading.transpose() * candidate.loading;
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector resid = batch[i].at(slot) - candidate.offset - candidate.loading * posteriors[i].mean;
    const double expected_sq = resid.squaredNorm() + (wtw * posteriors[i].cov).trace();
    total += -0.5 * d * (kLog2Pi + std::log(var)) - 0.5 * expected_sq / var;
  }
  return total;
}

// ---------------------------------------------------------------------------
// Likelihoods

double observed_loglik(const GenerativeParams& params, const ObservedInstance& obs) {
  check_instance(params, obs);
  const LatentSystem sys = latent_system(params, obs);
  Eigen::LLT<Matrix> llt(sys.precision);
  if (llt.info() != Eigen::Success) throw Error(ErrorKind::Conditioning, scales_message(params, obs.mask()));
  const double d = static_cast<double>(params.embed_dim());
  double log_det = log_det_spd(llt);
  double quad = -sys.rhs.dot(llt.solve(sys.rhs));
  double total_dim = 0.0;
  for (int slot : obs.mask().observed()) {
    const ModalityParams& mp = params.modality(slot);
    const double var = mp.noise_std * mp.noise_std;
    log_det += d * std::log(var);
    quad += (obs.at(slot) - mp.offset).squaredNorm() / var;
    total_dim += d;
  }
  return -0.5 * (total_dim * kLog2Pi + log_det + quad);
}

double observed_loglik_dense(const GenerativeParams& params, const ObservedInstance& obs) {
  check_instance(params, obs);
  const StackedBlocks s = stack_blocks(params, obs);
  Matrix cov = s.loading * s.loading.transpose();
  cov.diagonal() += s.noise_var;
  Eigen::LLT<Matrix> llt(cov);
  require(llt.info() == Eigen::Success, ErrorKind::Conditioning, "marginal covariance is not SPD");
  const Vector e = s.value - s.offset;
  const double n = static_cast<double>(e.size());
  return -0.5 * (n * kLog2Pi + log_det_spd(llt) + e.dot(llt.solve(e)));
}

double total_loglik(const GenerativeParams& params, std::span<const ObservedInstance> data,
                    int threads) {
  std::vector<double> per(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) { per[i] = observed_loglik(params, data[i]); });
  double total = 0.0;
  for (double v : per) total += v;
  return total;
}

double elbo(const GenerativeParams& params, const Posterior& q, const ObservedInstance& obs) {
  check_instance(params, obs);
  const int r = params.latent_dim();
  require(q.mean.size() == r && q.cov.rows() == r && q.cov.cols() == r, ErrorKind::InvalidPosterior,
          "posterior has the wrong dimension");
  require((q.cov - q.cov.transpose()).cwiseAbs().maxCoeff() <= 1e-10 * (1.0 + q.cov.cwiseAbs().maxCoeff()),
          ErrorKind::InvalidPosterior, "posterior covariance is not symmetric");
  Eigen::LLT<Matrix> llt(q.cov);
  require(llt.info() == Eigen::Success, ErrorKind::InvalidPosterior,
          "posterior covariance is not positive definite");
  const double d = static_cast<double>(params.embed_dim());
  double value = -0.5 * (r * kLog2Pi + q.mean.squaredNorm() + q.cov.trace());
  for (int slot : obs.mask().observed()) {
    const ModalityParams& mp = params.modality(slot);
    const double var = mp.noise_std * mp.noise_std;
    const Vector resid = obs.at(slot) - mp.offset - mp.loading * q.mean;
    const double expected_sq = resid.squaredNorm() + (mp.loading.transpose() * mp.loading * q.cov).trace();
    value += -0.5 * d * (kLog2Pi + std::log(var)) - 0.5 * expected_sq / var;
  }
  value += 0.5 * r * (1.0 + kLog2Pi) + 0.5 * log_det_spd(llt);
  return value;
}

double gaussian_kl(const Posterior& q, const Posterior& p) {
  const Eigen::Index r = q.mean.size();
  Eigen::LLT<Matrix> lp(p.cov);
  Eigen::LLT<Matrix> lq(q.cov);
  require(lp.info() == Eigen::Success && lq.info() == Eigen::Success, ErrorKind::InvalidPosterior,
          "KL needs positive definite covariances");
  const Vector diff = p.mean - q.mean;
  return 0.5 * ((lp.solve(q.cov)).trace() + diff.dot(lp.solve(diff)) - static_cast<double>(r) +
                log_det_spd(lp) - log_det_spd(lq));
}

// ---------------------------------------------------------------------------
// Imputation

Vector impute(const GenerativeParams& params, const Posterior& post, int target) {
  const ModalityParams& mp = params.modality(target);
  require(post.mean.size() == params.latent_dim(), ErrorKind::InvalidPosterior,
          "posterior mean has the wrong dimension");
  return mp.loading * post.mean + mp.offset;
}

Vector impute(const GenerativeParams& params, const Posterior& post, const std::string& target_id) {
  return impute(params, post, params.slot_of(target_id));
}

// ---------------------------------------------------------------------------
// Initialization and EM

GenerativeParams initialize_params(std::span<const ObservedInstance> data, int latent_dim,
                                   std::vector<std::string> ids) {
  require(!data.empty(), ErrorKind::InsufficientCoverage, "cannot initialize from an empty dataset");
  require(latent_dim >= 1, ErrorKind::InvalidInput, "latent dimension must be >= 1");
  const int k = data.front().slots();
  const Eigen::Index d = data.front().dim();
  if (ids.empty())
    for (int m = 0; m < k; ++m) ids.push_back("m" + std::to_string(m));
  require(static_cast<int>(ids.size()) == k, ErrorKind::InvalidInput, "one id per modality slot required");

  std::vector<ModalityParams> mods;
  std::vector<std::string> starved;
  for (int m = 0; m < k; ++m) {
    std::vector<const Vector*> zs;
    for (const auto& inst : data) {
      require(inst.slots() == k && inst.dim() == d, ErrorKind::InvalidInput,
              "instances disagree on slot count or dimension");
      if (inst.observes(m)) zs.push_back(&inst.at(m));
    }
    if (zs.empty()) {
      starved.push_back(ids[static_cast<std::size_t>(m)]);
      continue;
    }
    const Eigen::Index n = static_cast<Eigen::Index>(zs.size());
    Vector mean = Vector::Zero(d);
    for (const Vector* z : zs) mean += *z;
    mean /= static_cast<double>(n);
    Matrix centered(d, n);
    for (Eigen::Index i = 0; i < n; ++i) centered.col(i) = *zs[static_cast<std::size_t>(i)] - mean;

    Matrix loading = Matrix::Zero(d, latent_dim);
    Matrix residual = centered;
    if (centered.cwiseAbs().maxCoeff() > 0.0) {
      const SvdResult svd = decompose(centered);
      const Eigen::Index keep = std::min<Eigen::Index>(latent_dim, svd.u.cols());
      const Matrix basis = svd.u.leftCols(keep);
      loading.leftCols(keep) = 0.1 * basis;
      residual = centered - basis * (basis.transpose() * centered);
    }
    const double sd = std::sqrt(residual.squaredNorm() / (static_cast<double>(n) * static_cast<double>(d)));
    mods.push_back(ModalityParams{ids[static_cast<std::size_t>(m)], loading, mean, std::max(sd, 1e-3)});
  }
  if (!starved.empty()) {
    std::string list;
    for (const auto& s : starved) list += (list.empty() ? "" : ", ") + s;
    throw Error(ErrorKind::InsufficientCoverage, "no observations for modalities: " + list);
  }
  return GenerativeParams(latent_dim, std::move(mods));
}

EmResult em_fit(std::span<const ObservedInstance> data, const GenerativeParams& init,
                const EmOptions& options) {
  require(options.max_iters >= 1, ErrorKind::InvalidInput, "em_fit: max_iters must be >= 1");
  const int k = init.modality_count();
  const int r = init.latent_dim();

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < data.size(); ++i) {
    check_instance(init, data[i]);
    for (int m = 0; m < k; ++m)
      if (data[i].observes(m)) members[static_cast<std::size_t>(m)].push_back(i);
  }
  std::string starved;
  for (int m = 0; m < k; ++m)
    if (static_cast<int>(members[static_cast<std::size_t>(m)].size()) < r + 1)
      starved += (starved.empty() ? "" : ", ") + init.modality(m).id + " (" +
                 std::to_string(members[static_cast<std::size_t>(m)].size()) + " observations)";
  require(starved.empty(), ErrorKind::InsufficientCoverage,
          "each modality needs at least r + 1 = " + std::to_string(r + 1) +
              " observing instances; starved: " + starved);

  EmResult result{init, {}};
  FitTrace& trace = result.trace;
  double current = total_loglik(result.params, data, options.threads);
  trace.loglik.push_back(current);
  if (options.keep_snapshots) trace.snapshots.push_back(result.params);

  std::vector<Posterior> posts(data.size());
  for (int iter = 0; iter < options.max_iters; ++iter) {
    parallel_for(data.size(), options.threads,
                 [&](std::size_t i) { posts[i] = posterior_infer(result.params, data[i]); });

    GenerativeParams next = result.params;
    std::set<std::string> degenerate;
    for (int m = 0; m < k; ++m) {
      const auto& idx = members[static_cast<std::size_t>(m)];
      MStepResult step = m_step_impl(
          idx.size(), [&](std::size_t j) -> const Vector& { return data[idx[j]].at(m); },
          [&](std::size_t j) -> const Posterior& { return posts[idx[j]]; }, m, result.params,
          options.m_step);
      if (step.degenerate) degenerate.insert(step.params.id);
      next.set_modality(m, std::move(step.params));
    }
    result.params = std::move(next);
    trace.degenerate_modalities.assign(degenerate.begin(), degenerate.end());

    const double updated = total_loglik(result.params, data, options.threads);
    trace.loglik.push_back(updated);
    if (options.keep_snapshots) trace.snapshots.push_back(result.params);
    trace.iterations = iter + 1;
    const double gain = updated - current;
    current = updated;
    if (gain < options.tol) {
      trace.converged = true;
      break;
    }
  }
  return result;
}

}  // namespace calign
