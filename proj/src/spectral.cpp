#include "calign/spectral.hpp"

#include <cmath>
#include <set>

#include "calign/error.hpp"

namespace calign {
namespace {

void require_finite(const Matrix& m, const char* what) {
  if (m.size() == 0) throw Error(ErrorKind::InvalidInput, std::string(what) + ": empty matrix");
  if (!m.allFinite()) throw Error(ErrorKind::InvalidInput, std::string(what) + ": non-finite entries");
}

Eigen::Index largest_magnitude_index(const Eigen::Ref<const Vector>& x) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < x.size(); ++i)
    if (std::abs(x(i)) > std::abs(x(best))) best = i;
  return best;
}

std::vector<std::string> default_ids(Eigen::Index k) {
  std::vector<std::string> ids;
  for (Eigen::Index i = 0; i < k; ++i) ids.push_back("m" + std::to_string(i));
  return ids;
}

}  // namespace

EmbeddingStack::EmbeddingStack(Matrix columns, std::vector<std::string> ids)
    : columns_(std::move(columns)), ids_(std::move(ids)) {
  require_finite(columns_, "embedding stack");
  if (ids_.size() != static_cast<std::size_t>(columns_.cols()))
    throw Error(ErrorKind::InvalidInput, "embedding stack: one modality id per column required");
  if (std::set<std::string>(ids_.begin(), ids_.end()).size() != ids_.size())
    throw Error(ErrorKind::InvalidInput, "embedding stack: modality ids must be distinct");
  for (Eigen::Index j = 0; j < columns_.cols(); ++j) {
    const double n = columns_.col(j).norm();
    if (std::abs(n - 1.0) > kUnitTolerance)
      throw Error(ErrorKind::InvalidInput, "embedding stack: column " + std::to_string(j) +
                                               " is not unit norm (" + std::to_string(n) + ")");
  }
}

EmbeddingStack::EmbeddingStack(Matrix columns)
    : EmbeddingStack(columns, default_ids(columns.cols())) {}

EmbeddingStack EmbeddingStack::normalized(const Matrix& columns, std::vector<std::string> ids) {
  require_finite(columns, "embedding stack");
  Matrix out = columns;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double n = out.col(j).norm();
    if (n <= 0.0)
      throw Error(ErrorKind::DegenerateEmbedding,
                  "cannot normalize zero column " + std::to_string(j));
    out.col(j) /= n;
  }
  if (ids.empty()) ids = default_ids(out.cols());
  return EmbeddingStack(std::move(out), std::move(ids));
}

Matrix EmbeddingStack::observed(const ObservationMask& mask) const {
  if (mask.slots() != slots())
    throw Error(ErrorKind::InvalidMask, "mask slot count does not match the stack");
  Matrix out(dim(), mask.observed_count());
  Eigen::Index c = 0;
  for (int slot : mask.observed()) out.col(c++) = columns_.col(slot);
  return out;
}

Matrix EmbeddingStack::missing(const ObservationMask& mask) const {
  if (mask.slots() != slots())
    throw Error(ErrorKind::InvalidMask, "mask slot count does not match the stack");
  const auto gone = mask.missing();
  if (gone.empty()) return Matrix::Zero(dim(), 1);
  Matrix out(dim(), static_cast<Eigen::Index>(gone.size()));
  Eigen::Index c = 0;
  for (int slot : gone) out.col(c++) = columns_.col(slot);
  return out;
}

SvdResult decompose(const Matrix& m) {
  require_finite(m, "decompose");
  Eigen::JacobiSVD<Matrix> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out{svd.matrixU(), svd.singularValues(), svd.matrixV(), false};
  for (Eigen::Index j = 0; j < out.u.cols(); ++j) {
    const Eigen::Index idx = largest_magnitude_index(out.u.col(j));
    if (out.u(idx, j) < 0.0) {
      out.u.col(j) = -out.u.col(j);
      out.v.col(j) = -out.v.col(j);
    }
  }
  for (Eigen::Index j = 0; j + 1 < out.sigma.size(); ++j)
    if (out.sigma(j) - out.sigma(j + 1) < kNearDegenerateGap) out.near_degenerate = true;
  return out;
}

LeadingTriplet leading_triplet(const Matrix& m) {
  require_finite(m, "leading_triplet");
  if (m.cwiseAbs().maxCoeff() == 0.0)
    throw Error(ErrorKind::DegenerateInput, "leading_triplet: all-zero matrix");
  const SvdResult svd = decompose(m);
  LeadingTriplet t;
  t.sigma1 = svd.sigma(0);
  t.u1 = svd.u.col(0);
  t.v1 = svd.v.col(0);
  const double sigma2 = svd.sigma.size() > 1 ? svd.sigma(1) : 0.0;
  t.near_degenerate = t.sigma1 - sigma2 < kNearDegenerateGap;
  return t;
}

Matrix gram(const EmbeddingStack& stack, const ObservationMask& mask) {
  const Matrix zo = stack.observed(mask);
  Matrix g = zo.transpose() * zo;
  // exact symmetry and the unit diagonal the stack invariant guarantees
  g = 0.5 * (g + g.transpose()).eval();
  return g;
}

Vector gram_eigenvalues(const EmbeddingStack& stack, const ObservationMask& mask) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram(stack, mask), Eigen::EigenvaluesOnly);
  return es.eigenvalues().reverse();
}

double spectral_gap(const Matrix& m) {
  require_finite(m, "spectral_gap");
  if (std::min(m.rows(), m.cols()) < 2)
    throw Error(ErrorKind::InvalidInput, "spectral_gap needs min(rows, cols) >= 2");
  const SvdResult svd = decompose(m);
  return std::max(0.0, svd.sigma(0) - svd.sigma(1));
}

double leading_gap(const Matrix& m) {
  const SvdResult svd = decompose(m);
  const double s2 = svd.sigma.size() > 1 ? svd.sigma(1) : 0.0;
  return std::max(0.0, svd.sigma(0) - s2);
}

Matrix sigma1_grad(const Matrix& m) {
  const SvdResult svd = decompose(m);
  const double s2 = svd.sigma.size() > 1 ? svd.sigma(1) : 0.0;
  if (svd.sigma(0) - s2 < 1e-8)
    throw Error(ErrorKind::DegenerateSpectrum,
                "sigma1_grad: leading singular value is not simple (gap < 1e-8)");
  return svd.u.col(0) * svd.v.col(0).transpose();
}

}  // namespace calign
