#include "vbll/discriminative_head.hpp"

#include <cmath>

#include "head_common.hpp"
#include "vbll/distributions.hpp"
#include "vbll/special.hpp"

namespace vbll {

DiscriminativeHead::DiscriminativeHead(Index features, Index classes, HeadPriors priors,
                                       FactorLayout covariance_layout, bool freeze_noise)
    : VariationalHead(priors),
      w_mean_(Matrix::Zero(classes, features)),
      log_noise_(Matrix::Zero(classes, 1), !freeze_noise),
      freeze_noise_(freeze_noise) {
  require(features >= 1 && classes >= 2, "DiscriminativeHead: need N_phi >= 1 and >= 2 classes");
  covariance_.reserve(classes);
  for (Index k = 0; k < classes; ++k) {
    covariance_.emplace_back(TriangularFactor::identity(features, covariance_layout));
  }
}

ad::Var DiscriminativeHead::loss(ad::Tape& tape, ad::Var features, const Dataset& batch) {
  require(features.cols() == feature_dim(), "DiscriminativeHead::loss: feature width mismatch");
  require(static_cast<Index>(batch.labels.size()) == features.rows() && features.rows() >= 1,
          "DiscriminativeHead::loss: label count mismatch");
  for (int y : batch.labels) {
    require(y >= 0 && y < output_dim(), "DiscriminativeHead::loss: label out of range");
  }
  ad::Var w = tape.param(w_mean_);
  ad::Var logits = ad::matmul(features, ad::transpose(w));

  std::vector<ad::Var> spread;
  spread.reserve(covariance_.size());
  for (auto& s : covariance_) spread.push_back(quad_form_rows(bind(tape, s), features));
  ad::Var extra = ad::hconcat(spread);
  if (!freeze_noise_) extra = extra + ad::exp(ad::transpose(tape.param(log_noise_)));

  ad::Var lse = ad::logsumexp_rows(logits + 0.5 * extra);
  return ad::mean(ad::pick(logits, batch.labels) - lse);
}

RegularizerTerms DiscriminativeHead::regularizer(ad::Tape& tape, double dataset_size,
                                                 double kl_weight) {
  require(dataset_size >= 1.0, "DiscriminativeHead::regularizer: T must be at least 1");
  ad::Var w = tape.param(w_mean_);
  const Matrix zero_row = Matrix::Zero(1, feature_dim());
  RegularizerTerms terms;
  for (Index k = 0; k < output_dim(); ++k) {
    ad::Var kl_k = kl_head_to_prior(ad::row(w, k), bind(tape, covariance_[k]), zero_row,
                                    priors_.prior_scale, 1);
    terms.kl = terms.kl.valid() ? terms.kl + kl_k : kl_k;
  }
  if (freeze_noise_) {
    terms.noise_log_prior = tape.constant(0.0);
  } else {
    // Sigma = diag(sigma^2): logdet Sigma^{-1} = -sum log sigma^2, tr Sigma^{-1} = sum 1/sigma^2.
    ad::Var log_var = tape.param(log_noise_);
    terms.noise_log_prior = invwishart_logprior(-ad::sum(log_var), ad::sum(ad::exp(-log_var)),
                                                priors_.wishart);
  }
  terms.total = (-kl_weight / dataset_size) * terms.kl + (1.0 / dataset_size) * terms.noise_log_prior;
  return terms;
}

std::vector<ad::Parameter*> DiscriminativeHead::parameters() {
  std::vector<ad::Parameter*> out{&w_mean_};
  for (auto& s : covariance_) {
    for (auto* p : s.parameters()) out.push_back(p);
  }
  if (!freeze_noise_) out.push_back(&log_noise_);
  return out;
}

std::vector<ad::Parameter*> DiscriminativeHead::noise_parameters() {
  if (freeze_noise_) return {};
  return {&log_noise_};
}

void DiscriminativeHead::initialize_mean(const Matrix& mean) { set_mean(mean); }

Json DiscriminativeHead::to_json() const {
  Json j;
  j["kind"] = to_string(kind());
  j["features"] = feature_dim();
  j["outputs"] = output_dim();
  j["freeze_noise"] = freeze_noise_;
  detail::write_priors(j, priors_);
  j["W_mean"] = matrix_to_json(w_mean_.values);
  j["log_noise"] = matrix_to_json(log_noise_.values);
  for (Index k = 0; k < output_dim(); ++k) {
    detail::write_factor(j, "S_" + std::to_string(k), covariance_[k].value());
  }
  return j;
}

DiscriminativeHead DiscriminativeHead::from_json(const Json& j) {
  require(j.at("kind").get<std::string>() == "discriminative",
          "DiscriminativeHead: wrong checkpoint kind");
  const Index nphi = j.at("features").get<Index>();
  const Index k = j.at("outputs").get<Index>();
  TriangularFactor first = detail::read_factor(j, "S_0", nphi);
  DiscriminativeHead head(nphi, k, detail::read_priors(j), first.layout(),
                          j.at("freeze_noise").get<bool>());
  head.set_mean(read_array(j, "W_mean", k, nphi));
  head.set_log_noise(read_array(j, "log_noise", k, 1).col(0));
  for (Index c = 0; c < k; ++c) {
    head.set_covariance(c, detail::read_factor(j, "S_" + std::to_string(c), nphi));
  }
  return head;
}

std::unique_ptr<VariationalHead> DiscriminativeHead::clone() const {
  return std::make_unique<DiscriminativeHead>(*this);
}

Vector DiscriminativeHead::noise_variance() const {
  if (freeze_noise_) return Vector::Zero(output_dim());
  return log_noise_.values.col(0).array().exp();
}

Vector DiscriminativeHead::predict(const Vector& phi, int samples, Rng& rng) const {
  require(samples >= 1, "DiscriminativeHead::predict: need at least one sample");
  require(phi.size() == feature_dim(), "DiscriminativeHead::predict: feature width mismatch");
  const Index k = output_dim();
  // w_k^T phi ~ N(w_bar_k^T phi, phi^T S_k phi); adding eps_k gives the logit law.
  const Vector mean = w_mean_.values * phi;
  Vector stddev(k);
  const Vector noise = noise_variance();
  for (Index c = 0; c < k; ++c) {
    stddev(c) = std::sqrt(quad_form(covariance_[c].value(), phi) + noise(c));
  }
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector probs = Vector::Zero(k);
  Vector logits(k);
  for (int s = 0; s < samples; ++s) {
    for (Index c = 0; c < k; ++c) logits(c) = mean(c) + stddev(c) * normal(rng);
    probs += softmax(logits);
  }
  return probs / static_cast<double>(samples);
}

double DiscriminativeHead::kl() const {
  double total = 0.0;
  const Matrix zero_row = Matrix::Zero(1, feature_dim());
  for (Index k = 0; k < output_dim(); ++k) {
    total += kl_head_to_prior(w_mean_.values.row(k), covariance_[k].value(), zero_row,
                              priors_.prior_scale, 1);
  }
  return total;
}

void DiscriminativeHead::set_mean(const Matrix& w) {
  require(w.rows() == output_dim() && w.cols() == feature_dim(), "set_mean: shape mismatch");
  w_mean_.values = w;
}

void DiscriminativeHead::set_covariance(Index k, const TriangularFactor& s) {
  require(k >= 0 && k < output_dim() && s.dim() == feature_dim(), "set_covariance: bad input");
  covariance_[k] = FactorParameters(s);
}

void DiscriminativeHead::set_log_noise(const Vector& log_noise) {
  require(log_noise.size() == output_dim(), "set_log_noise: size mismatch");
  log_noise_.values = log_noise;
}

}  // namespace vbll
