#pragma once

#include "vbll/distributions.hpp"
#include "vbll/heads.hpp"
#include "vbll/triangular_factor.hpp"

namespace vbll {

/// Gaussian-discriminant head: phi | y ~ N(mu_y, Sigma), mu_k ~ N(mu_bar_k, S_k),
/// class probabilities rho ~ Dir(alpha). Sigma and every S_k are diagonal;
/// Sigma is parameterized by its own covariance factor.
class GenerativeHead final : public VariationalHead {
 public:
  GenerativeHead(Index features, Index classes, HeadPriors priors = {},
                 Vector prior_alpha = Vector());

  HeadKind kind() const override { return HeadKind::generative; }
  Index feature_dim() const override { return means_.values.cols(); }
  Index output_dim() const override { return means_.values.rows(); }

  /// mean_t [log N(phi|mu_bar_y, Sigma) - 1/2 tr(Sigma^{-1} S_y)
  ///         + psi(alpha_y) - psi(alpha_*) + log alpha_*
  ///         - LSE_k(log N(phi|mu_bar_k, Sigma + S_k) + log alpha_k)].
  /// The Dirichlet terms are constants with respect to every parameter.
  ad::Var loss(ad::Tape& tape, ad::Var features, const Dataset& batch) override;
  /// KL sums the per-class Gaussian terms and the (constant) Dirichlet term.
  RegularizerTerms regularizer(ad::Tape& tape, double dataset_size, double kl_weight) override;
  std::vector<ad::Parameter*> parameters() override;
  std::vector<ad::Parameter*> noise_parameters() override;
  void initialize_mean(const Matrix& mean) override;
  /// Sets alpha = prior_alpha + class counts.
  void prepare(const Dataset& full) override;

  Json to_json() const override;
  static GenerativeHead from_json(const Json& j);
  std::unique_ptr<VariationalHead> clone() const override;

  /// softmax_y(log N(phi | mu_bar_y, Sigma + S_y) + log alpha_y).
  Vector predict(const Vector& phi) const;
  /// log N(phi | mu_bar_k, Sigma + S_k) for every class.
  Vector class_log_density(const Vector& phi) const;
  double kl() const;
  double gaussian_kl() const;
  double dirichlet_kl() const;
  double noise_log_prior() const;

  Matrix means() const { return means_.values; }
  /// Diagonal of S_k.
  Vector class_variance(Index k) const;
  /// Diagonal of Sigma.
  Vector noise_variance() const;
  const DirichletPosterior& dirichlet() const { return posterior_; }
  const Vector& prior_alpha() const { return prior_alpha_; }
  const Matrix& prior_mean() const { return prior_mean_; }

  void set_means(const Matrix& m);
  /// Sets every S_k from a K x N_phi matrix of log standard deviations.
  void set_log_std(const Matrix& log_std);
  void set_noise_variance(const Vector& variance);
  void set_dirichlet(const DirichletPosterior& posterior);

  ad::Parameter& mean_parameter() { return means_; }
  ad::Parameter& log_std_parameter() { return log_std_; }
  FactorParameters& noise_factor() { return noise_; }

 private:
  ad::Parameter means_;
  ad::Parameter log_std_;  // row k: log sqrt(diag S_k)
  FactorParameters noise_;  // covariance factor of Sigma
  Matrix prior_mean_;
  Vector prior_alpha_;
  DirichletPosterior posterior_;
};

}  // namespace vbll
