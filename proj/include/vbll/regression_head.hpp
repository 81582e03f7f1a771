#pragma once

#include "vbll/distributions.hpp"
#include "vbll/heads.hpp"
#include "vbll/triangular_factor.hpp"

namespace vbll {

using GaussianPrediction = GaussianMoments;

/// Regression head y = W phi + eps with q(W) = MN(W_bar, I, S) and
/// eps ~ N(0, Sigma). S and Sigma^{-1} are Cholesky-parameterized.
class RegressionHead final : public VariationalHead {
 public:
  RegressionHead(Index features, Index outputs, HeadPriors priors = {},
                 FactorLayout covariance_layout = FactorLayout::dense,
                 FactorLayout noise_layout = FactorLayout::dense);

  HeadKind kind() const override { return HeadKind::regression; }
  Index feature_dim() const override { return w_mean_.values.cols(); }
  Index output_dim() const override { return w_mean_.values.rows(); }

  /// Without a mask: mean_t [log N(y_t | W_bar phi_t, Sigma) - 1/2 phi_t^T S phi_t tr(Sigma^{-1})].
  /// With a mask (diagonal noise only) each observed entry contributes its own
  /// univariate term.
  ad::Var loss(ad::Tape& tape, ad::Var features, const Dataset& batch) override;
  RegularizerTerms regularizer(ad::Tape& tape, double dataset_size, double kl_weight) override;
  std::vector<ad::Parameter*> parameters() override;
  std::vector<ad::Parameter*> noise_parameters() override;
  void initialize_mean(const Matrix& mean) override;

  Json to_json() const override;
  static RegressionHead from_json(const Json& j);
  std::unique_ptr<VariationalHead> clone() const override;

  /// N(W_bar phi, phi^T S phi I + Sigma).
  GaussianPrediction predict(const Vector& phi) const;
  /// W ~ MN(W_bar, I, S).
  Matrix sample_weights(Rng& rng) const;
  double kl() const;
  double noise_log_prior() const;

  Matrix mean() const { return w_mean_.values; }
  TriangularFactor covariance() const { return covariance_.value(); }
  TriangularFactor noise_precision() const { return noise_precision_.value(); }
  /// Noise covariance Sigma.
  Matrix noise_covariance() const;

  void set_mean(const Matrix& w);
  void set_covariance(const TriangularFactor& s);
  void set_noise_precision(const TriangularFactor& precision);

  const Matrix& prior_mean() const { return prior_mean_; }
  void set_prior_mean(const Matrix& m);

  ad::Parameter& mean_parameter() { return w_mean_; }
  FactorParameters& covariance_parameters() { return covariance_; }
  FactorParameters& noise_factor() { return noise_precision_; }

 private:
  ad::Var masked_loss(ad::Tape& tape, ad::Var features, const Dataset& batch,
                      ad::Var w, const FactorVar& s, const FactorVar& noise);

  ad::Parameter w_mean_;
  FactorParameters covariance_;
  FactorParameters noise_precision_;
  Matrix prior_mean_;
};

}  // namespace vbll
