#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "calign/align_loss.hpp"
#include "calign/latent_model.hpp"
#include "calign/rng.hpp"
#include "calign/spectral.hpp"

namespace calign::testing {

inline Matrix unit_columns(Matrix m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) m.col(j).normalize();
  return m;
}

inline Matrix random_unit_stack(Engine& rng, Eigen::Index d, Eigen::Index k) {
  return unit_columns(standard_normal(rng, d, k));
}

inline Vector unit(Eigen::Index d, Eigen::Index i) { return Vector::Unit(d, i); }

/// Stack built from explicit columns.
inline Matrix columns(std::initializer_list<Vector> cols) {
  Matrix m(cols.begin()->size(), static_cast<Eigen::Index>(cols.size()));
  Eigen::Index j = 0;
  for (const auto& c : cols) m.col(j++) = c;
  return m;
}

/// Singular values of M from the eigenvalues of MᵀM, nonincreasing.
inline Vector oracle_singular_values(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.transpose() * m);
  Vector s = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().reverse();
  return s;
}

/// Leading eigenvector of M Mᵀ (the leading left singular vector, up to sign).
inline Vector oracle_leading_left(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(m * m.transpose());
  return es.eigenvectors().col(es.eigenvectors().cols() - 1);
}

/// Central differences of a scalar function over every entry of `x`.
inline Matrix fd_gradient(const std::function<double(const Matrix&)>& f, const Matrix& x, double h = 1e-6) {
  Matrix g(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      probe(i, j) = x(i, j) + h;
      const double up = f(probe);
      probe(i, j) = x(i, j) - h;
      const double down = f(probe);
      probe(i, j) = x(i, j);
      g(i, j) = (up - down) / (2.0 * h);
    }
  }
  return g;
}

inline double relative_error(const Matrix& a, const Matrix& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1.0, b.cwiseAbs().maxCoeff());
}

/// Random generative parameters with well-conditioned blocks.
inline GenerativeParams random_params(Engine& rng, int r, Eigen::Index d, int k) {
  std::uniform_real_distribution<double> sigma(0.2, 1.0);
  std::vector<ModalityParams> blocks;
  for (int m = 0; m < k; ++m) {
    ModalityParams p;
    p.id = "m" + std::to_string(m);
    p.loading = standard_normal(rng, d, r);
    p.offset = standard_normal(rng, d);
    p.noise_std = sigma(rng);
    blocks.push_back(std::move(p));
  }
  return GenerativeParams(r, std::move(blocks));
}

/// Instance drawn from `params` with the given observed slots.
inline ObservedInstance random_observed(const GenerativeParams& params, Engine& rng, const ObservationMask& mask) {
  const SampledInstance s = sample_instance(params, rng);
  std::vector<std::optional<Vector>> slots(static_cast<std::size_t>(params.modality_count()));
  for (int m : mask.observed()) slots[static_cast<std::size_t>(m)] = s.embeddings[static_cast<std::size_t>(m)];
  return ObservedInstance(std::move(slots));
}

/// Uniformly random nonempty subset of k slots.
inline ObservationMask random_mask(Engine& rng, int k, int max_observed = -1) {
  if (max_observed < 0) max_observed = k;
  std::uniform_int_distribution<int> count(1, max_observed);
  std::vector<int> slots(static_cast<std::size_t>(k));
  for (int i = 0; i < k; ++i) slots[static_cast<std::size_t>(i)] = i;
  std::shuffle(slots.begin(), slots.end(), rng);
  slots.resize(static_cast<std::size_t>(count(rng)));
  std::sort(slots.begin(), slots.end());
  return ObservationMask(k, slots);
}

/// Σ_i E_q[log N(z_i; Wβ + μ, σ² I)] written out from the Gaussian density.
inline double expected_loglik_oracle(const std::vector<ObservedInstance>& batch,
                                     const std::vector<Posterior>& posts, int slot, const Matrix& w, const Vector& mu, double sigma) {
  const double d = static_cast<double>(mu.size());
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector c = batch[i].at(slot) - mu;
    const double quad = c.squaredNorm() - 2.0 * c.dot(w * posts[i].mean) +
                        (w.transpose() * w * posts[i].second_moment()).trace();
    total += -0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma) - 0.5 * quad / (sigma * sigma);
  }
  return total;
}

/// Random unit-column stacks whose spectral gap exceeds `min_gap`.
inline std::vector<LossItem> random_batch(Engine& rng, int n, Eigen::Index d, Eigen::Index k, double min_gap = 0.1) {
  std::vector<LossItem> batch;
  while (static_cast<int>(batch.size()) < n) {
    const Matrix z = random_unit_stack(rng, d, k);
    if (spectral_gap(z) <= min_gap) continue;
    batch.push_back(LossItem{z, {}});
  }
  return batch;
}

/// Central-difference gradient of the batch loss in the stack of instance i.
inline Matrix fd_for_item(const std::vector<LossItem>& batch, std::size_t i, const LossConfig& config,
                          const MatchingHead* head) {
  return fd_gradient(
      [&](const Matrix& z) {
        auto probe = batch;
        probe[i].stack = z;
        return rep_loss(probe, config, head).total;
      },
      batch[i].stack);
}

}  // namespace calign::testing
