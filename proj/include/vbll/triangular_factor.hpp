#pragma once

// Cholesky-factor parameterization of positive definite matrices.
//
// A factor stores the strictly lower part of L and the log of its diagonal,
// L = off_diag + diag(exp(log_diag)), and represents M = L L^T. Every query
// below works on L directly: trace and quadratic forms are O(dim^2) for the
// dense layout and O(dim) for the diagonal layout, log-determinants are O(dim).
// The diagonal layout stores no off-diagonal block at all.

#include <vector>

#include "vbll/autodiff.hpp"
#include "vbll/types.hpp"

namespace vbll {

enum class FactorLayout { dense, diagonal };

class TriangularFactor {
 public:
  /// Dense layout. Entries of `off_diag` on or above the diagonal are dropped.
  TriangularFactor(const Matrix& off_diag, Vector log_diag);
  /// Diagonal layout.
  explicit TriangularFactor(Vector log_diag);

  static TriangularFactor identity(Index dim, FactorLayout layout = FactorLayout::dense);
  /// Factor of a given lower-triangular matrix with positive diagonal.
  static TriangularFactor from_lower(const Matrix& lower, FactorLayout layout = FactorLayout::dense);
  /// Cholesky factor of a symmetric positive definite matrix. The diagonal
  /// layout only accepts diagonal matrices.
  static TriangularFactor from_spd(const Matrix& m, FactorLayout layout = FactorLayout::dense);

  Index dim() const { return log_diag_.size(); }
  FactorLayout layout() const { return layout_; }
  bool is_diagonal() const { return layout_ == FactorLayout::diagonal; }
  /// Strictly lower part (dim x dim). Empty for the diagonal layout.
  const Matrix& off_diag() const { return off_diag_; }
  const Vector& log_diag() const { return log_diag_; }

  /// Materialized L.
  Matrix lower() const;
  /// Materialized L L^T. Test and reporting use only.
  Matrix matrix() const;

 private:
  Matrix off_diag_;
  Vector log_diag_;
  FactorLayout layout_;
};

/// v^T L L^T v = ||L^T v||^2.
double quad_form(const TriangularFactor& factor, const Vector& v);
/// tr(L L^T) = ||L||_F^2.
double trace(const TriangularFactor& factor);
/// logdet(L L^T) = 2 sum log_diag.
double logdet(const TriangularFactor& factor);
/// (L L^T)^{-1} v by two triangular solves.
Vector solve(const TriangularFactor& factor, const Vector& v);
/// mean + L z with z standard normal.
Vector sample_gaussian(const Vector& mean, const TriangularFactor& factor, Rng& rng);

// ---------------------------------------------------------------------------
// Trainable factors

/// Leaf parameters for a factor: off_diag (dim x dim, dense layout only) and
/// log_diag (dim x 1).
struct FactorParameters {
  FactorParameters() = default;
  explicit FactorParameters(const TriangularFactor& initial);

  TriangularFactor value() const;
  std::vector<ad::Parameter*> parameters();
  Index dim() const { return log_diag.values.rows(); }
  bool is_diagonal() const { return layout == FactorLayout::diagonal; }

  ad::Parameter off_diag;
  ad::Parameter log_diag;
  FactorLayout layout = FactorLayout::dense;
};

/// A factor bound to a tape.
struct FactorVar {
  ad::Var off_diag;  // invalid for the diagonal layout
  ad::Var log_diag;
  FactorLayout layout = FactorLayout::dense;
  Index dim = 0;
};

FactorVar bind(ad::Tape& tape, FactorParameters& factor);
FactorVar bind_constant(ad::Tape& tape, const TriangularFactor& factor);

/// Materialized L on the tape (dense layout).
ad::Var lower(const FactorVar& factor);
/// Row-wise quadratic forms: out(i) = r_i L L^T r_i^T for each row r_i; n x 1.
ad::Var quad_form_rows(const FactorVar& factor, ad::Var rows);
ad::Var trace(const FactorVar& factor);
ad::Var logdet(const FactorVar& factor);

}  // namespace vbll
