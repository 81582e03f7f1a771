#include "vbll/regression_head.hpp"

#include "head_common.hpp"
#include "vbll/special.hpp"

namespace vbll {

RegressionHead::RegressionHead(Index features, Index outputs, HeadPriors priors,
                               FactorLayout covariance_layout, FactorLayout noise_layout)
    : VariationalHead(priors),
      w_mean_(Matrix::Zero(outputs, features)),
      covariance_(TriangularFactor::identity(features, covariance_layout)),
      noise_precision_(TriangularFactor::identity(outputs, noise_layout)),
      prior_mean_(Matrix::Zero(outputs, features)) {
  require(features >= 1 && outputs >= 1, "RegressionHead: dimensions must be positive");
}

ad::Var RegressionHead::loss(ad::Tape& tape, ad::Var features, const Dataset& batch) {
  require(features.cols() == feature_dim(), "RegressionHead::loss: feature width mismatch");
  require(batch.Y.rows() == features.rows() && batch.Y.cols() == output_dim(),
          "RegressionHead::loss: target shape mismatch");
  require(features.rows() >= 1, "RegressionHead::loss: empty batch");
  ad::Var w = tape.param(w_mean_);
  FactorVar s = bind(tape, covariance_);
  FactorVar noise = bind(tape, noise_precision_);
  if (batch.has_mask()) return masked_loss(tape, features, batch, w, s, noise);

  const double ny = static_cast<double>(output_dim());
  ad::Var residual = tape.constant(batch.Y) - ad::matmul(features, ad::transpose(w));
  ad::Var loglik =
      -0.5 * (quad_form_rows(noise, residual) - logdet(noise)) - 0.5 * ny * kLog2Pi;
  ad::Var penalty = 0.5 * ad::hadamard(quad_form_rows(s, features), trace(noise));
  return ad::mean(loglik - penalty);
}

ad::Var RegressionHead::masked_loss(ad::Tape& tape, ad::Var features, const Dataset& batch,
                                    ad::Var w, const FactorVar& s, const FactorVar& noise) {
  require(noise.layout == FactorLayout::diagonal,
          "RegressionHead::loss: masked targets need a diagonal noise precision");
  require(batch.observed.rows() == batch.Y.rows() && batch.observed.cols() == batch.Y.cols(),
          "RegressionHead::loss: mask shape mismatch");
  // Independent outputs: each observed entry j adds
  //   -1/2 (e_j^2 lambda_j - log lambda_j + log 2 pi) - 1/2 phi^T S phi lambda_j.
  ad::Var log_lambda = 2.0 * ad::transpose(noise.log_diag);
  ad::Var lambda = ad::exp(log_lambda);
  ad::Var residual = tape.constant(batch.Y) - ad::matmul(features, ad::transpose(w));
  ad::Var loglik = -0.5 * ((ad::hadamard(ad::square(residual), lambda) - log_lambda) + kLog2Pi);
  ad::Var penalty = 0.5 * ad::matmul(quad_form_rows(s, features), lambda);
  ad::Var per_entry = ad::hadamard(loglik - penalty, tape.constant(batch.observed));
  return ad::sum(per_entry) * (1.0 / static_cast<double>(batch.Y.rows()));
}

RegularizerTerms RegressionHead::regularizer(ad::Tape& tape, double dataset_size,
                                             double kl_weight) {
  require(dataset_size >= 1.0, "RegressionHead::regularizer: T must be at least 1");
  ad::Var w = tape.param(w_mean_);
  FactorVar s = bind(tape, covariance_);
  FactorVar noise = bind(tape, noise_precision_);
  RegularizerTerms terms;
  terms.kl = kl_head_to_prior(w, s, prior_mean_, priors_.prior_scale, output_dim());
  terms.noise_log_prior = invwishart_logprior(noise, priors_.wishart);
  terms.total = (-kl_weight / dataset_size) * terms.kl + (1.0 / dataset_size) * terms.noise_log_prior;
  return terms;
}

std::vector<ad::Parameter*> RegressionHead::parameters() {
  std::vector<ad::Parameter*> out{&w_mean_};
  for (auto* p : covariance_.parameters()) out.push_back(p);
  for (auto* p : noise_precision_.parameters()) out.push_back(p);
  return out;
}

std::vector<ad::Parameter*> RegressionHead::noise_parameters() { return noise_precision_.parameters(); }

void RegressionHead::initialize_mean(const Matrix& mean) { set_mean(mean); }

Json RegressionHead::to_json() const {
  Json j;
  j["kind"] = to_string(kind());
  j["features"] = feature_dim();
  j["outputs"] = output_dim();
  detail::write_priors(j, priors_);
  j["W_mean"] = matrix_to_json(w_mean_.values);
  j["prior_mean"] = matrix_to_json(prior_mean_);
  detail::write_factor(j, "S", covariance_.value());
  detail::write_factor(j, "noise_precision", noise_precision_.value());
  return j;
}

RegressionHead RegressionHead::from_json(const Json& j) {
  require(j.at("kind").get<std::string>() == "regression", "RegressionHead: wrong checkpoint kind");
  const Index nphi = j.at("features").get<Index>();
  const Index ny = j.at("outputs").get<Index>();
  TriangularFactor s = detail::read_factor(j, "S", nphi);
  TriangularFactor noise = detail::read_factor(j, "noise_precision", ny);
  RegressionHead head(nphi, ny, detail::read_priors(j), s.layout(), noise.layout());
  head.set_mean(read_array(j, "W_mean", ny, nphi));
  head.set_prior_mean(read_array(j, "prior_mean", ny, nphi));
  head.set_covariance(s);
  head.set_noise_precision(noise);
  return head;
}

std::unique_ptr<VariationalHead> RegressionHead::clone() const {
  return std::make_unique<RegressionHead>(*this);
}

Matrix RegressionHead::noise_covariance() const {
  const TriangularFactor precision = noise_precision_.value();
  const Index ny = output_dim();
  Matrix out(ny, ny);
  for (Index j = 0; j < ny; ++j) out.col(j) = solve(precision, Vector::Unit(ny, j));
  return 0.5 * (out + out.transpose());
}

GaussianPrediction RegressionHead::predict(const Vector& phi) const {
  require(phi.size() == feature_dim(), "RegressionHead::predict: feature width mismatch");
  const double spread = quad_form(covariance_.value(), phi);
  Matrix cov = noise_covariance();
  cov.diagonal().array() += spread;
  return {w_mean_.values * phi, std::move(cov)};
}

Matrix RegressionHead::sample_weights(Rng& rng) const {
  // Rows are independent draws from N(w_bar_i, S).
  const TriangularFactor s = covariance_.value();
  Matrix w(output_dim(), feature_dim());
  for (Index i = 0; i < output_dim(); ++i) {
    w.row(i) = sample_gaussian(w_mean_.values.row(i).transpose(), s, rng).transpose();
  }
  return w;
}

double RegressionHead::kl() const {
  return kl_head_to_prior(w_mean_.values, covariance_.value(), prior_mean_, priors_.prior_scale,
                          output_dim());
}

double RegressionHead::noise_log_prior() const {
  return invwishart_logprior(noise_precision_.value(), priors_.wishart);
}

void RegressionHead::set_mean(const Matrix& w) {
  require(w.rows() == output_dim() && w.cols() == feature_dim(), "set_mean: shape mismatch");
  w_mean_.values = w;
}

void RegressionHead::set_covariance(const TriangularFactor& s) {
  require(s.dim() == feature_dim(), "set_covariance: dimension mismatch");
  const bool trainable = covariance_.log_diag.requires_grad;
  covariance_ = FactorParameters(s);
  for (auto* p : covariance_.parameters()) p->requires_grad = trainable;
}

void RegressionHead::set_noise_precision(const TriangularFactor& precision) {
  require(precision.dim() == output_dim(), "set_noise_precision: dimension mismatch");
  const bool trainable = noise_precision_.log_diag.requires_grad;
  noise_precision_ = FactorParameters(precision);
  for (auto* p : noise_precision_.parameters()) p->requires_grad = trainable;
}

void RegressionHead::set_prior_mean(const Matrix& m) {
  require(m.rows() == output_dim() && m.cols() == feature_dim(), "set_prior_mean: shape mismatch");
  prior_mean_ = m;
}

}  // namespace vbll
