#include "vbll/triangular_factor.hpp"

#include <cmath>

namespace vbll {

TriangularFactor::TriangularFactor(const Matrix& off_diag, Vector log_diag)
    : off_diag_(Matrix::Zero(log_diag.size(), log_diag.size())),
      log_diag_(std::move(log_diag)),
      layout_(FactorLayout::dense) {
  require(off_diag.rows() == dim() && off_diag.cols() == dim(),
          "TriangularFactor: off_diag must be dim x dim");
  off_diag_.triangularView<Eigen::StrictlyLower>() = off_diag.triangularView<Eigen::StrictlyLower>();
}

TriangularFactor::TriangularFactor(Vector log_diag)
    : log_diag_(std::move(log_diag)), layout_(FactorLayout::diagonal) {}

TriangularFactor TriangularFactor::identity(Index dim, FactorLayout layout) {
  if (layout == FactorLayout::diagonal) return TriangularFactor(Vector::Zero(dim));
  return TriangularFactor(Matrix::Zero(dim, dim), Vector::Zero(dim));
}

TriangularFactor TriangularFactor::from_lower(const Matrix& lower, FactorLayout layout) {
  require(lower.rows() == lower.cols(), "from_lower: matrix must be square");
  Vector d = lower.diagonal();
  require((d.array() > 0.0).all(), "from_lower: diagonal must be positive");
  Vector ld = d.array().log();
  if (layout == FactorLayout::diagonal) {
    require(lower.triangularView<Eigen::StrictlyLower>().toDenseMatrix().isZero(0.0),
            "from_lower: diagonal layout requires a diagonal matrix");
    return TriangularFactor(std::move(ld));
  }
  return TriangularFactor(lower, std::move(ld));
}

TriangularFactor TriangularFactor::from_spd(const Matrix& m, FactorLayout layout) {
  require(m.rows() == m.cols(), "from_spd: matrix must be square");
  if (layout == FactorLayout::diagonal) {
    Matrix off = m;
    off.diagonal().setZero();
    require(off.isZero(0.0), "from_spd: diagonal layout requires a diagonal matrix");
    require((m.diagonal().array() > 0.0).all(), "from_spd: matrix is not positive definite");
    Vector ld = 0.5 * m.diagonal().array().log();
    return TriangularFactor(std::move(ld));
  }
  Eigen::LLT<Matrix> llt(m);
  require(llt.info() == Eigen::Success, "from_spd: matrix is not positive definite");
  return from_lower(llt.matrixL(), layout);
}

Matrix TriangularFactor::lower() const {
  if (is_diagonal()) return Matrix(log_diag_.array().exp().matrix().asDiagonal());
  Matrix l = off_diag_;
  l.diagonal() = log_diag_.array().exp();
  return l;
}

Matrix TriangularFactor::matrix() const {
  Matrix l = lower();
  return l * l.transpose();
}

double quad_form(const TriangularFactor& factor, const Vector& v) {
  require(v.size() == factor.dim(), "quad_form: dimension mismatch");
  const Vector& ld = factor.log_diag();
  double total = 0.0;
  if (factor.is_diagonal()) {
    for (Index j = 0; j < v.size(); ++j) {
      const double w = std::exp(ld(j)) * v(j);
      total += w * w;
    }
    return total;
  }
  const Matrix& off = factor.off_diag();
  const Index n = v.size();
  for (Index j = 0; j < n; ++j) {
    // (L^T v)_j = sum_{i >= j} L_ij v_i
    double w = std::exp(ld(j)) * v(j);
    for (Index i = j + 1; i < n; ++i) w += off(i, j) * v(i);
    total += w * w;
  }
  return total;
}

double trace(const TriangularFactor& factor) {
  double total = (2.0 * factor.log_diag().array()).exp().sum();
  if (!factor.is_diagonal()) total += factor.off_diag().squaredNorm();
  return total;
}

double logdet(const TriangularFactor& factor) { return 2.0 * factor.log_diag().sum(); }

Vector solve(const TriangularFactor& factor, const Vector& v) {
  require(v.size() == factor.dim(), "solve: dimension mismatch");
  if (factor.is_diagonal()) return (v.array() * (-2.0 * factor.log_diag().array()).exp()).matrix();
  Matrix l = factor.lower();
  Vector y = l.triangularView<Eigen::Lower>().solve(v);
  return l.transpose().triangularView<Eigen::Upper>().solve(y);
}

Vector sample_gaussian(const Vector& mean, const TriangularFactor& factor, Rng& rng) {
  require(mean.size() == factor.dim(), "sample_gaussian: dimension mismatch");
  std::normal_distribution<double> normal(0.0, 1.0);
  const Index n = factor.dim();
  Vector z(n);
  for (Index i = 0; i < n; ++i) z(i) = normal(rng);
  const Vector d = factor.log_diag().array().exp();
  Vector out = mean;
  if (factor.is_diagonal()) {
    out.array() += d.array() * z.array();
    return out;
  }
  const Matrix& off = factor.off_diag();
  for (Index i = 0; i < n; ++i) {
    double acc = d(i) * z(i);
    for (Index j = 0; j < i; ++j) acc += off(i, j) * z(j);
    out(i) += acc;
  }
  return out;
}

FactorParameters::FactorParameters(const TriangularFactor& initial)
    : log_diag(Matrix(initial.log_diag())), layout(initial.layout()) {
  if (!initial.is_diagonal()) off_diag = ad::Parameter(initial.off_diag());
}

TriangularFactor FactorParameters::value() const {
  Vector ld = log_diag.values.col(0);
  if (is_diagonal()) return TriangularFactor(std::move(ld));
  return TriangularFactor(off_diag.values, std::move(ld));
}

std::vector<ad::Parameter*> FactorParameters::parameters() {
  if (is_diagonal()) return {&log_diag};
  return {&off_diag, &log_diag};
}

FactorVar bind(ad::Tape& tape, FactorParameters& factor) {
  FactorVar out;
  out.layout = factor.layout;
  out.dim = factor.dim();
  out.log_diag = tape.param(factor.log_diag);
  if (!factor.is_diagonal()) out.off_diag = tape.param(factor.off_diag);
  return out;
}

FactorVar bind_constant(ad::Tape& tape, const TriangularFactor& factor) {
  FactorVar out;
  out.layout = factor.layout();
  out.dim = factor.dim();
  out.log_diag = tape.constant(Matrix(factor.log_diag()));
  if (!factor.is_diagonal()) out.off_diag = tape.constant(factor.off_diag());
  return out;
}

ad::Var lower(const FactorVar& factor) {
  require(factor.layout == FactorLayout::dense, "lower: dense layout required");
  return ad::lower_triangular(factor.off_diag, factor.log_diag);
}

ad::Var quad_form_rows(const FactorVar& factor, ad::Var rows) {
  require(rows.cols() == factor.dim, "quad_form_rows: dimension mismatch");
  if (factor.layout == FactorLayout::diagonal) {
    ad::Var scale = ad::exp(ad::transpose(factor.log_diag));
    return ad::row_sum(ad::square(ad::hadamard(rows, scale)));
  }
  return ad::row_sum(ad::square(ad::lower_triangular_product(rows, factor.off_diag, factor.log_diag)));
}

ad::Var trace(const FactorVar& factor) {
  if (factor.layout == FactorLayout::diagonal) return ad::sum(ad::exp(2.0 * factor.log_diag));
  return ad::lower_triangular_sqnorm(factor.off_diag, factor.log_diag);
}

ad::Var logdet(const FactorVar& factor) { return 2.0 * ad::sum(factor.log_diag); }

}  // namespace vbll
