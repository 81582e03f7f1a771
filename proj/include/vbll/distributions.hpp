#pragma once

// Probability primitives shared by the last-layer heads: Gaussian log-densities,
// closed-form expected Gaussian log-likelihoods under Gaussian parameter
// uncertainty, KL penalties, the inverse-Wishart noise prior, and the
// Dirichlet posterior over class probabilities.

#include <span>

#include "vbll/autodiff.hpp"
#include "vbll/triangular_factor.hpp"
#include "vbll/types.hpp"

namespace vbll {

// ---- Gaussian log densities ----

/// log N(y | mean, Sigma) with Sigma^{-1} = L L^T given by its factor.
double gaussian_logpdf(const Vector& y, const Vector& mean, const TriangularFactor& precision);
/// log N(y | mean, diag(variance)).
double gaussian_logpdf_diag(const Vector& y, const Vector& mean, const Vector& variance);
/// log N(y | mean, covariance) for a dense SPD covariance.
double gaussian_logpdf_dense(const Vector& y, const Vector& mean, const Matrix& covariance);

// ---- expected log-likelihoods, E_q[log N(.)] in closed form ----

/// y ~ N(X mu, Sigma), mu ~ N(mu_bar, S):
///   log N(y | X mu_bar, Sigma) - 1/2 tr(Sigma^{-1} X S X^T).
double expected_loglik_linear(const Vector& y, const Matrix& design, const Vector& mu_bar,
                              const TriangularFactor& covariance,
                              const TriangularFactor& noise_precision);
/// Identity design: log N(y | mu_bar, Sigma) - 1/2 tr(Sigma^{-1} S).
double expected_loglik_identity(const Vector& y, const Vector& mu_bar,
                                const TriangularFactor& covariance,
                                const TriangularFactor& noise_precision);
/// y ~ N(W x, Sigma), W ~ MN(W_bar, I, S):
///   log N(y | W_bar x, Sigma) - 1/2 x^T S x tr(Sigma^{-1}).
double expected_loglik_matrix_normal(const Vector& y, const Vector& x, const Matrix& w_bar,
                                     const TriangularFactor& covariance,
                                     const TriangularFactor& noise_precision);

struct GaussianMoments {
  Vector mean;
  Matrix covariance;
};

/// Parameters of E_mu[N(x | mu, Sigma)] with mu ~ N(mean, S): N(mean, Sigma + S).
GaussianMoments marginal_gaussian(const Vector& mean, const Matrix& s, const Matrix& sigma);

// ---- KL penalties ----

/// KL(MN(W_bar, I, S) || MN(W_prior, I, s I)) including the additive constants:
///   1/2 [ ||W_bar - W_prior||_F^2 / s + N_y (tr(S)/s + N_phi log s - logdet S - N_phi) ].
double kl_head_to_prior(const Matrix& w_mean, const TriangularFactor& covariance,
                        const Matrix& prior_mean, double prior_scale, Index n_outputs);
ad::Var kl_head_to_prior(ad::Var w_mean, const FactorVar& covariance, const Matrix& prior_mean,
                         double prior_scale, Index n_outputs);

// ---- inverse-Wishart noise prior ----

/// Inverse-Wishart hyperparameters with scale matrix m I. The degrees of freedom
/// are stored as nu_tilde = nu + N + 1.
struct WishartPrior {
  double nu_tilde = 1.0;
  double scale = 1.0;

  static WishartPrior from_dof(double nu, Index dim, double scale);
  double dof(Index dim) const { return nu_tilde - static_cast<double>(dim) - 1.0; }
};

/// nu_tilde/2 logdet(Sigma^{-1}) - m/2 tr(Sigma^{-1}), constants dropped.
double invwishart_logprior(const TriangularFactor& precision, const WishartPrior& prior);
/// Same prior evaluated for a diagonal covariance factor Sigma = L L^T.
double invwishart_logprior_covariance(const TriangularFactor& covariance, const WishartPrior& prior);
ad::Var invwishart_logprior(ad::Var logdet_precision, ad::Var trace_precision,
                            const WishartPrior& prior);
ad::Var invwishart_logprior(const FactorVar& precision, const WishartPrior& prior);

// ---- Dirichlet posterior over class probabilities ----

class DirichletPosterior {
 public:
  explicit DirichletPosterior(Vector alpha);

  const Vector& alpha() const { return alpha_; }
  double alpha_star() const { return alpha_star_; }
  Index classes() const { return alpha_.size(); }
  /// E[log rho_y] = psi(alpha_y) - psi(alpha_*).
  Vector expected_log() const;
  /// log E[rho_y] = log alpha_y - log alpha_*.
  Vector log_expected() const;

 private:
  Vector alpha_;
  double alpha_star_;
};

/// alpha = prior_alpha + class_counts.
DirichletPosterior dirichlet_stats(const Vector& prior_alpha, std::span<const long> class_counts);

/// KL(Dir(alpha) || Dir(prior_alpha)).
double dirichlet_kl(const Vector& alpha, const Vector& prior_alpha);

}  // namespace vbll
