#include "vbll/distributions.hpp"

#include <cmath>

#include "vbll/special.hpp"

namespace vbll {

double gaussian_logpdf(const Vector& y, const Vector& mean, const TriangularFactor& precision) {
  require(y.size() == mean.size() && y.size() == precision.dim(),
          "gaussian_logpdf: dimension mismatch");
  const Vector e = y - mean;
  const double d = static_cast<double>(y.size());
  return -0.5 * (quad_form(precision, e) - logdet(precision) + d * kLog2Pi);
}

double gaussian_logpdf_diag(const Vector& y, const Vector& mean, const Vector& variance) {
  require(y.size() == mean.size() && y.size() == variance.size(),
          "gaussian_logpdf_diag: dimension mismatch");
  const double d = static_cast<double>(y.size());
  const double quad = ((y - mean).array().square() / variance.array()).sum();
  return -0.5 * (quad + variance.array().log().sum() + d * kLog2Pi);
}

double gaussian_logpdf_dense(const Vector& y, const Vector& mean, const Matrix& covariance) {
  require(y.size() == mean.size() && covariance.rows() == y.size() &&
              covariance.cols() == y.size(),
          "gaussian_logpdf_dense: dimension mismatch");
  Eigen::LLT<Matrix> llt(covariance);
  require(llt.info() == Eigen::Success, "gaussian_logpdf_dense: covariance not SPD");
  const Vector z = llt.matrixL().solve(y - mean);
  const double ld = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
  const double d = static_cast<double>(y.size());
  return -0.5 * (z.squaredNorm() + ld + d * kLog2Pi);
}

double expected_loglik_linear(const Vector& y, const Matrix& design, const Vector& mu_bar,
                              const TriangularFactor& covariance,
                              const TriangularFactor& noise_precision) {
  require(design.rows() == y.size() && design.cols() == mu_bar.size() &&
              covariance.dim() == mu_bar.size() && noise_precision.dim() == y.size(),
          "expected_loglik_linear: shape mismatch");
  // tr(Sigma^{-1} X S X^T) = ||L^T X P||_F^2 with Sigma^{-1} = L L^T, S = P P^T.
  const Matrix penalty_root = noise_precision.lower().transpose() * design * covariance.lower();
  return gaussian_logpdf(y, design * mu_bar, noise_precision) - 0.5 * penalty_root.squaredNorm();
}

double expected_loglik_identity(const Vector& y, const Vector& mu_bar,
                                const TriangularFactor& covariance,
                                const TriangularFactor& noise_precision) {
  require(y.size() == mu_bar.size() && covariance.dim() == y.size() &&
              noise_precision.dim() == y.size(),
          "expected_loglik_identity: shape mismatch");
  const Matrix penalty_root = noise_precision.lower().transpose() * covariance.lower();
  return gaussian_logpdf(y, mu_bar, noise_precision) - 0.5 * penalty_root.squaredNorm();
}

double expected_loglik_matrix_normal(const Vector& y, const Vector& x, const Matrix& w_bar,
                                     const TriangularFactor& covariance,
                                     const TriangularFactor& noise_precision) {
  require(w_bar.rows() == y.size() && w_bar.cols() == x.size() && covariance.dim() == x.size() &&
              noise_precision.dim() == y.size(),
          "expected_loglik_matrix_normal: shape mismatch");
  return gaussian_logpdf(y, w_bar * x, noise_precision) -
         0.5 * quad_form(covariance, x) * trace(noise_precision);
}

GaussianMoments marginal_gaussian(const Vector& mean, const Matrix& s, const Matrix& sigma) {
  require(s.rows() == mean.size() && s.cols() == mean.size() && sigma.rows() == mean.size() &&
              sigma.cols() == mean.size(),
          "marginal_gaussian: dimension mismatch");
  return {mean, sigma + s};
}

double kl_head_to_prior(const Matrix& w_mean, const TriangularFactor& covariance,
                        const Matrix& prior_mean, double prior_scale, Index n_outputs) {
  require(prior_scale > 0.0, "kl_head_to_prior: prior scale must be positive");
  require(w_mean.rows() == prior_mean.rows() && w_mean.cols() == prior_mean.cols() &&
              w_mean.cols() == covariance.dim(),
          "kl_head_to_prior: shape mismatch");
  const double nphi = static_cast<double>(covariance.dim());
  const double ny = static_cast<double>(n_outputs);
  const double mean_term = (w_mean - prior_mean).squaredNorm() / prior_scale;
  const double cov_term = trace(covariance) / prior_scale + nphi * std::log(prior_scale) -
                          logdet(covariance) - nphi;
  return 0.5 * (mean_term + ny * cov_term);
}

ad::Var kl_head_to_prior(ad::Var w_mean, const FactorVar& covariance, const Matrix& prior_mean,
                         double prior_scale, Index n_outputs) {
  require(prior_scale > 0.0, "kl_head_to_prior: prior scale must be positive");
  ad::Tape& t = w_mean.tape();
  const double nphi = static_cast<double>(covariance.dim);
  const double ny = static_cast<double>(n_outputs);
  ad::Var mean_term = ad::sum(ad::square(w_mean - t.constant(prior_mean))) * (1.0 / prior_scale);
  ad::Var cov_term = vbll::trace(covariance) * (1.0 / prior_scale) - vbll::logdet(covariance) +
                     (nphi * std::log(prior_scale) - nphi);
  return 0.5 * (mean_term + ny * cov_term);
}

WishartPrior WishartPrior::from_dof(double nu, Index dim, double scale) {
  return {nu + static_cast<double>(dim) + 1.0, scale};
}

double invwishart_logprior(const TriangularFactor& precision, const WishartPrior& prior) {
  return 0.5 * prior.nu_tilde * logdet(precision) - 0.5 * prior.scale * trace(precision);
}

double invwishart_logprior_covariance(const TriangularFactor& covariance,
                                      const WishartPrior& prior) {
  require(covariance.is_diagonal(), "invwishart_logprior_covariance: diagonal layout required");
  const double logdet_precision = -logdet(covariance);
  const double trace_precision = (-2.0 * covariance.log_diag().array()).exp().sum();
  return 0.5 * prior.nu_tilde * logdet_precision - 0.5 * prior.scale * trace_precision;
}

ad::Var invwishart_logprior(ad::Var logdet_precision, ad::Var trace_precision,
                            const WishartPrior& prior) {
  return 0.5 * prior.nu_tilde * logdet_precision - 0.5 * prior.scale * trace_precision;
}

ad::Var invwishart_logprior(const FactorVar& precision, const WishartPrior& prior) {
  return invwishart_logprior(vbll::logdet(precision), vbll::trace(precision), prior);
}

DirichletPosterior::DirichletPosterior(Vector alpha) : alpha_(std::move(alpha)) {
  require(alpha_.size() > 0, "DirichletPosterior: empty concentration");
  require((alpha_.array() > 0.0).all(), "DirichletPosterior: concentrations must be positive");
  alpha_star_ = alpha_.sum();
}

Vector DirichletPosterior::expected_log() const {
  const double psi_star = digamma(alpha_star_);
  Vector out(alpha_.size());
  for (Index k = 0; k < alpha_.size(); ++k) out(k) = digamma(alpha_(k)) - psi_star;
  return out;
}

Vector DirichletPosterior::log_expected() const {
  return (alpha_.array().log() - std::log(alpha_star_)).matrix();
}

DirichletPosterior dirichlet_stats(const Vector& prior_alpha, std::span<const long> class_counts) {
  require(static_cast<Index>(class_counts.size()) == prior_alpha.size(),
          "dirichlet_stats: count length mismatch");
  require((prior_alpha.array() > 0.0).all(), "dirichlet_stats: prior must be positive");
  Vector alpha = prior_alpha;
  for (Index k = 0; k < alpha.size(); ++k) {
    require(class_counts[k] >= 0, "dirichlet_stats: negative count");
    alpha(k) += static_cast<double>(class_counts[k]);
  }
  return DirichletPosterior(std::move(alpha));
}

double dirichlet_kl(const Vector& alpha, const Vector& prior_alpha) {
  require(alpha.size() == prior_alpha.size(), "dirichlet_kl: size mismatch");
  const double a0 = alpha.sum();
  const double b0 = prior_alpha.sum();
  double kl = std::lgamma(a0) - std::lgamma(b0);
  const double psi0 = digamma(a0);
  for (Index k = 0; k < alpha.size(); ++k) {
    kl += std::lgamma(prior_alpha(k)) - std::lgamma(alpha(k)) +
          (alpha(k) - prior_alpha(k)) * (digamma(alpha(k)) - psi0);
  }
  return kl;
}

}  // namespace vbll
