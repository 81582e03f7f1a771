#pragma once

#include <vector>

#include "vbll/heads.hpp"
#include "vbll/triangular_factor.hpp"

namespace vbll {

/// Softmax classification head with independent rows w_k ~ N(w_bar_k, S_k) and
/// logit noise eps_k ~ N(0, sigma_k^2), sigma_k^2 = exp(log_noise_k).
class DiscriminativeHead final : public VariationalHead {
 public:
  DiscriminativeHead(Index features, Index classes, HeadPriors priors = {},
                     FactorLayout covariance_layout = FactorLayout::dense,
                     bool freeze_noise = false);

  HeadKind kind() const override { return HeadKind::discriminative; }
  Index feature_dim() const override { return w_mean_.values.cols(); }
  Index output_dim() const override { return w_mean_.values.rows(); }

  /// mean_t [w_bar_y^T phi - LSE_k(w_bar_k^T phi + 1/2 (phi^T S_k phi + sigma_k^2))].
  ad::Var loss(ad::Tape& tape, ad::Var features, const Dataset& batch) override;
  /// KL summed over rows; the inverse-Wishart prior acts on diag(sigma^2)
  /// unless the noise is frozen at zero.
  RegularizerTerms regularizer(ad::Tape& tape, double dataset_size, double kl_weight) override;
  std::vector<ad::Parameter*> parameters() override;
  std::vector<ad::Parameter*> noise_parameters() override;
  void initialize_mean(const Matrix& mean) override;

  Json to_json() const override;
  static DiscriminativeHead from_json(const Json& j);
  std::unique_ptr<VariationalHead> clone() const override;

  /// (1/K) sum_j softmax(W^(j) phi + eps^(j)).
  Vector predict(const Vector& phi, int samples, Rng& rng) const;
  double kl() const;

  bool noise_frozen() const { return freeze_noise_; }
  /// sigma_k^2, zero when frozen.
  Vector noise_variance() const;
  Matrix mean() const { return w_mean_.values; }
  TriangularFactor covariance(Index k) const { return covariance_.at(k).value(); }

  void set_mean(const Matrix& w);
  void set_covariance(Index k, const TriangularFactor& s);
  void set_log_noise(const Vector& log_noise);

  ad::Parameter& mean_parameter() { return w_mean_; }
  ad::Parameter& log_noise_parameter() { return log_noise_; }

 private:
  ad::Parameter w_mean_;
  std::vector<FactorParameters> covariance_;
  ad::Parameter log_noise_;
  bool freeze_noise_;
};

}  // namespace vbll
