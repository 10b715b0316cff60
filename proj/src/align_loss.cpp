#include "calign/align_loss.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "calign/error.hpp"
#include "calign/rng.hpp"

namespace calign {
namespace {

constexpr double kMinGradGap = 1e-6;

// Singular values padded with zeros up to k.
Vector padded_singular_values(const SvdResult& svd, Eigen::Index k) {
  Vector lambda = Vector::Zero(k);
  lambda.head(svd.sigma.size()) = svd.sigma;
  return lambda;
}

// softmax over λ/τ, computed relative to the maximum λ1.
Vector singular_softmax(const Vector& lambda, double tau) {
  Vector w = ((lambda.array() - lambda(0)) / tau).exp();
  return w / w.sum();
}

void check_batch(const std::vector<LossItem>& batch) {
  if (batch.empty()) throw Error(ErrorKind::InvalidStack, "loss needs a non-empty batch");
  const Eigen::Index d = batch.front().stack.rows();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& item = batch[i];
    if (item.stack.rows() != d)
      throw Error(ErrorKind::InvalidStack, "instance " + std::to_string(i) + " has a different dimension");
    if (item.stack.cols() < 2)
      throw Error(ErrorKind::InvalidStack, "instance " + std::to_string(i) + " has fewer than two columns");
    if (!item.observed.empty() && item.observed.size() != static_cast<std::size_t>(item.stack.cols()))
      throw Error(ErrorKind::InvalidStack, "instance " + std::to_string(i) + " has a malformed observed mask");
    if (!item.stack.allFinite())
      throw Error(ErrorKind::InvalidStack, "instance " + std::to_string(i) + " has non-finite entries");
  }
}

std::vector<int> observed_columns(const LossItem& item) {
  std::vector<int> cols;
  for (Eigen::Index j = 0; j < item.stack.cols(); ++j)
    if (item.observed.empty() || item.observed[static_cast<std::size_t>(j)]) cols.push_back(static_cast<int>(j));
  if (cols.empty()) throw Error(ErrorKind::InvalidStack, "instance has no observed column for matching");
  return cols;
}

// Cyclic permutation via Sattolo's shuffle; a derangement for n ≥ 2.
std::vector<int> seeded_derangement(std::size_t n, std::uint64_t seed) {
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Engine engine = make_stream(seed, "matching_negatives");
  for (std::size_t i = n - 1; i >= 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i], perm[pick(engine)]);
  }
  return perm;
}

double log_sigmoid(double s) { return s >= 0.0 ? -std::log1p(std::exp(-s)) : s - std::log1p(std::exp(s)); }

double sigmoid(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

struct UniformityParts {
  double value = 0.0;
  std::vector<Vector> grad;  // ∂U/∂u_a
};

UniformityParts uniformity_with_grad(const std::vector<Vector>& anchors, double tau_prime, bool want_grad) {
  const std::size_t n = anchors.size();
  Matrix sims(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sims(i, j) = anchors[i].dot(anchors[j]);
  Vector frac(n);
  Matrix prob(n, n);  // row-softmax of sims / τ'
  for (std::size_t i = 0; i < n; ++i) {
    const double top = sims.row(i).maxCoeff();
    const Vector w = ((sims.row(i).transpose().array() - top) / tau_prime).exp();
    const double denom = w.sum();
    prob.row(i) = (w / denom).transpose();
    frac(i) = std::exp((sims(i, i) - top) / tau_prime) / denom;
  }
  UniformityParts out;
  out.value = frac.mean();
  if (!want_grad) return out;
  const double scale = 1.0 / (static_cast<double>(n) * tau_prime);
  for (std::size_t a = 0; a < n; ++a) {
    Vector g = 2.0 * anchors[a];
    for (std::size_t j = 0; j < n; ++j) g -= prob(a, j) * anchors[j];
    g *= frac(a);
    for (std::size_t i = 0; i < n; ++i) g -= frac(i) * prob(i, a) * anchors[i];
    out.grad.push_back(scale * g);
  }
  return out;
}

// dU/dZ given dU/du1 for the canonical leading left singular vector.
Matrix anchor_backprop(const SvdResult& svd, const Vector& grad_u1) {
  const Eigen::Index p = svd.sigma.size();
  const double s1 = svd.sigma(0);
  const Vector u1 = svd.u.col(0);
  const Vector v1 = svd.v.col(0);
  Matrix out = Matrix::Zero(svd.u.rows(), svd.v.rows());
  for (Eigen::Index j = 1; j < p; ++j) {
    const double sj = svd.sigma(j);
    const double c = grad_u1.dot(svd.u.col(j)) / (s1 * s1 - sj * sj);
    out.noalias() += c * s1 * svd.u.col(j) * v1.transpose();
    out.noalias() += c * sj * u1 * svd.v.col(j).transpose();
  }
  // directions orthogonal to the column space of Z
  const Vector outside = grad_u1 - svd.u * (svd.u.transpose() * grad_u1);
  out.noalias() += (outside / s1) * v1.transpose();
  return out;
}

}  // namespace

LossItem LossItem::from(const EmbeddingStack& stack, std::vector<bool> observed) {
  return LossItem{stack.matrix(), std::move(observed)};
}

double align_term(const Matrix& stack, double tau) {
  if (stack.cols() < 2) throw Error(ErrorKind::InvalidStack, "align_term needs at least two modalities");
  if (!(tau > 0.0)) throw Error(ErrorKind::InvalidInput, "tau must be positive");
  const SvdResult svd = decompose(stack);
  return singular_softmax(padded_singular_values(svd, stack.cols()), tau)(0);
}

double align_term(const EmbeddingStack& stack, double tau) { return align_term(stack.matrix(), tau); }

double uniformity_term(const std::vector<Vector>& anchors, double tau_prime) {
  if (anchors.empty()) throw Error(ErrorKind::InvalidAnchor, "uniformity_term needs at least one anchor");
  if (!(tau_prime > 0.0)) throw Error(ErrorKind::InvalidInput, "tau' must be positive");
  for (std::size_t i = 0; i < anchors.size(); ++i)
    if (std::abs(anchors[i].norm() - 1.0) > 1e-6)
      throw Error(ErrorKind::InvalidAnchor, "anchor " + std::to_string(i) + " is not unit norm");
  return uniformity_with_grad(anchors, tau_prime, false).value;
}

Vector anchor_of(const Matrix& stack) { return leading_triplet(stack).u1; }

MatchingSamples matching_samples(const std::vector<LossItem>& batch, std::uint64_t seed) {
  if (batch.size() < 2)
    throw Error(ErrorKind::InsufficientNegatives, "matching needs at least two instances for negatives");
  const std::vector<int> perm = seeded_derangement(batch.size(), seed);
  MatchingSamples s;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto cols = observed_columns(batch[i]);
    s.pooled.push_back(0.5 * (batch[i].stack.col(cols.front()) + batch[i].stack.col(cols.back())));
    s.labels.push_back(1.0);
    s.partner.push_back(static_cast<int>(i));
  }
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& other = batch[static_cast<std::size_t>(perm[i])];
    const auto mine = observed_columns(batch[i]);
    const auto theirs = observed_columns(other);
    s.pooled.push_back(0.5 * (batch[i].stack.col(mine.front()) + other.stack.col(theirs.back())));
    s.labels.push_back(0.0);
    s.partner.push_back(perm[i]);
  }
  return s;
}

double matching_loglik(const MatchingSamples& samples, const MatchingHead& head) {
  double total = 0.0;
  for (std::size_t s = 0; s < samples.pooled.size(); ++s) {
    const double score = head.weight.dot(samples.pooled[s]) + head.bias;
    const double y = samples.labels[s];
    total += y * log_sigmoid(score) + (1.0 - y) * log_sigmoid(-score);
  }
  return total / static_cast<double>(samples.pooled.size());
}

HeadGradient matching_head_gradient(const MatchingSamples& samples, const MatchingHead& head) {
  HeadGradient g{Vector::Zero(head.weight.size()), 0.0};
  const double inv = 1.0 / static_cast<double>(samples.pooled.size());
  for (std::size_t s = 0; s < samples.pooled.size(); ++s) {
    const double resid = samples.labels[s] - sigmoid(head.weight.dot(samples.pooled[s]) + head.bias);
    g.weight += inv * resid * samples.pooled[s];
    g.bias += inv * resid;
  }
  return g;
}

double matching_term(const std::vector<LossItem>& batch, const MatchingHead& head, std::uint64_t seed) {
  check_batch(batch);
  if (head.weight.size() != batch.front().stack.rows())
    throw Error(ErrorKind::InvalidInput, "matching head dimension does not match the embeddings");
  return matching_loglik(matching_samples(batch, seed), head);
}

LossBreakdown rep_loss(const std::vector<LossItem>& batch, const LossConfig& config, const MatchingHead* head) {
  check_batch(batch);
  LossBreakdown out;
  out.tau = config.tau;
  out.tau_prime = config.tau_prime;
  out.alpha = config.alpha;
  std::vector<Vector> anchors;
  double align_sum = 0.0;
  for (const auto& item : batch) {
    const SvdResult svd = decompose(item.stack);
    align_sum += singular_softmax(padded_singular_values(svd, item.stack.cols()), config.tau)(0);
    anchors.push_back(svd.u.col(0));
  }
  out.align_term = align_sum / static_cast<double>(batch.size());
  out.uniformity_term = uniformity_term(anchors, config.tau_prime);
  double matching = 0.0;
  if (head) {
    out.matching_term = matching_term(batch, *head, config.seed);
    matching = *out.matching_term;
  }
  out.total = -(out.align_term + out.uniformity_term) + config.alpha * matching;
  return out;
}

LossGradient rep_loss_grad(const std::vector<LossItem>& batch, const LossConfig& config, const MatchingHead* head) {
  check_batch(batch);
  const std::size_t n = batch.size();
  LossGradient out;
  out.loss.tau = config.tau;
  out.loss.tau_prime = config.tau_prime;
  out.loss.alpha = config.alpha;

  std::vector<SvdResult> svds;
  std::vector<Vector> anchors;
  double align_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    svds.push_back(decompose(batch[i].stack));
    const SvdResult& svd = svds.back();
    const double gap = svd.sigma(0) - (svd.sigma.size() > 1 ? svd.sigma(1) : 0.0);
    if (gap < kMinGradGap)
      throw Error(ErrorKind::DegenerateSpectrum,
                  "instance " + std::to_string(i) + ": leading gap " + std::to_string(gap) + " is below 1e-6");
    anchors.push_back(svd.u.col(0));

    const Eigen::Index k = batch[i].stack.cols();
    const Vector soft = singular_softmax(padded_singular_values(svd, k), config.tau);
    const double frac = soft(0);
    align_sum += frac;
    // ∂frac/∂λ_j = frac (δ_j1 − soft_j) / τ, and ∂λ_j/∂Z = u_j v_jᵀ
    Matrix g = Matrix::Zero(batch[i].stack.rows(), k);
    for (Eigen::Index j = 0; j < svd.sigma.size(); ++j) {
      const double dfrac = frac * ((j == 0 ? 1.0 : 0.0) - soft(j)) / config.tau;
      g.noalias() += dfrac * svd.u.col(j) * svd.v.col(j).transpose();
    }
    out.stacks.push_back(-g / static_cast<double>(n));
  }
  out.loss.align_term = align_sum / static_cast<double>(n);

  const UniformityParts uni = uniformity_with_grad(anchors, config.tau_prime, true);
  out.loss.uniformity_term = uni.value;
  for (std::size_t i = 0; i < n; ++i) out.stacks[i] -= anchor_backprop(svds[i], uni.grad[i]);

  double matching = 0.0;
  if (head) {
    if (head->weight.size() != batch.front().stack.rows())
      throw Error(ErrorKind::InvalidInput, "matching head dimension does not match the embeddings");
    const MatchingSamples samples = matching_samples(batch, config.seed);
    matching = matching_loglik(samples, *head);
    out.loss.matching_term = matching;
    const double inv = 1.0 / static_cast<double>(samples.pooled.size());
    for (std::size_t s = 0; s < samples.pooled.size(); ++s) {
      const double resid = samples.labels[s] - sigmoid(head->weight.dot(samples.pooled[s]) + head->bias);
      // ∂/∂pooled, and each pooled vector is the mean of two columns
      const Vector dp = config.alpha * inv * resid * 0.5 * head->weight;
      const std::size_t owner = s % n;
      const auto mine = observed_columns(batch[owner]);
      out.stacks[owner].col(mine.front()) += dp;
      const std::size_t other = s < n ? owner : static_cast<std::size_t>(samples.partner[s]);
      const auto theirs = observed_columns(batch[other]);
      out.stacks[other].col(theirs.back()) += dp;
    }
  }
  out.loss.total = -(out.loss.align_term + out.loss.uniformity_term) + config.alpha * matching;
  return out;
}

}  // namespace calign
