#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "calign/mask.hpp"

namespace calign {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Column stack of unit-norm modality embeddings, one column per modality slot.
class EmbeddingStack {
 public:
  static constexpr double kUnitTolerance = 1e-9;

  /// Throws InvalidInput unless every column has norm 1 within 1e-9, the
  /// matrix is non-empty and finite, and `ids` are distinct (one per column).
  EmbeddingStack(Matrix columns, std::vector<std::string> ids);

  /// Ids default to "m0", "m1", ...
  explicit EmbeddingStack(Matrix columns);

  /// Normalizes each column first; throws DegenerateEmbedding on a zero column.
  static EmbeddingStack normalized(const Matrix& columns, std::vector<std::string> ids = {});

  const Matrix& matrix() const { return columns_; }
  Eigen::Index dim() const { return columns_.rows(); }
  int slots() const { return static_cast<int>(columns_.cols()); }
  const std::vector<std::string>& modality_ids() const { return ids_; }

  /// Z^Ω: observed columns in slot order.
  Matrix observed(const ObservationMask& mask) const;
  /// Z^Ω̄: missing columns in slot order (zero columns when the mask is full).
  Matrix missing(const ObservationMask& mask) const;

 private:
  Matrix columns_;
  std::vector<std::string> ids_;
};

struct SvdResult {
  Matrix u;      // d x p, orthonormal columns
  Vector sigma;  // p values, nonincreasing, nonnegative
  Matrix v;      // k x p, orthonormal columns
  bool near_degenerate = false;  // some adjacent pair of singular values within 1e-10
};

struct LeadingTriplet {
  double sigma1 = 0.0;
  Vector u1;
  Vector v1;
  bool near_degenerate = false;  // sigma1 - sigma2 < 1e-10
};

inline constexpr double kNearDegenerateGap = 1e-10;

/// Thin SVD with canonical signs: in every left vector the entry of largest
/// magnitude (lowest index on ties) is nonnegative, and the matching right
/// vector is flipped with it. Throws InvalidInput on non-finite entries.
SvdResult decompose(const Matrix& m);

/// Throws InvalidInput on non-finite input and DegenerateInput on an all-zero
/// matrix. A missing second singular value counts as zero.
LeadingTriplet leading_triplet(const Matrix& m);

/// Pairwise inner products of the observed columns, |Ω| x |Ω|.
Matrix gram(const EmbeddingStack& stack, const ObservationMask& mask);

/// Eigenvalues of the Gram matrix, nonincreasing. They equal the squared
/// singular values of Z^Ω (the λ_i = σ_i² relation).
Vector gram_eigenvalues(const EmbeddingStack& stack, const ObservationMask& mask);

/// σ1 − σ2; requires min(rows, cols) ≥ 2 (InvalidInput otherwise).
double spectral_gap(const Matrix& m);

/// Gap with the convention σ2 = 0 for a single-column or single-row matrix.
double leading_gap(const Matrix& m);

/// ∂σ1/∂M = u1 v1ᵀ. Throws DegenerateSpectrum when σ1 − σ2 < 1e-8.
Matrix sigma1_grad(const Matrix& m);

}  // namespace calign
