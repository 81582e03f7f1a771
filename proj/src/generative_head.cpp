#include "vbll/generative_head.hpp"

#include <cmath>

#include "head_common.hpp"
#include "vbll/special.hpp"

namespace vbll {

namespace {

Vector default_alpha(Index classes, Vector alpha) {
  if (alpha.size() == 0) return Vector::Ones(classes);
  require(alpha.size() == classes, "GenerativeHead: prior alpha length mismatch");
  return alpha;
}

}  // namespace

GenerativeHead::GenerativeHead(Index features, Index classes, HeadPriors priors,
                               Vector prior_alpha)
    : VariationalHead(priors),
      means_(Matrix::Zero(classes, features)),
      log_std_(Matrix::Zero(classes, features)),
      noise_(TriangularFactor::identity(features, FactorLayout::diagonal)),
      prior_mean_(Matrix::Zero(classes, features)),
      prior_alpha_(default_alpha(classes, std::move(prior_alpha))),
      posterior_(prior_alpha_) {
  require(features >= 1 && classes >= 2, "GenerativeHead: need N_phi >= 1 and >= 2 classes");
}

ad::Var GenerativeHead::loss(ad::Tape& tape, ad::Var features, const Dataset& batch) {
  require(features.cols() == feature_dim(), "GenerativeHead::loss: feature width mismatch");
  const Index b = features.rows();
  const Index k = output_dim();
  require(static_cast<Index>(batch.labels.size()) == b && b >= 1,
          "GenerativeHead::loss: label count mismatch");

  Matrix one_hot = Matrix::Zero(b, k);
  Matrix dirichlet_terms(b, 1);
  const Vector expected_log = posterior_.expected_log();
  const double log_alpha_star = std::log(posterior_.alpha_star());
  for (Index t = 0; t < b; ++t) {
    const int y = batch.labels[t];
    require(y >= 0 && y < k, "GenerativeHead::loss: label out of range");
    one_hot(t, y) = 1.0;
    dirichlet_terms(t, 0) = expected_log(y) + log_alpha_star;
  }
  const double half_n_log2pi = 0.5 * static_cast<double>(feature_dim()) * kLog2Pi;

  ad::Var mu = tape.param(means_);
  ad::Var class_var = ad::exp(2.0 * tape.param(log_std_));  // K x N
  ad::Var log_sd = ad::transpose(tape.param(noise_.log_diag));  // 1 x N
  ad::Var noise_var = ad::exp(2.0 * log_sd);
  ad::Var noise_precision = ad::exp(-2.0 * log_sd);
  ad::Var select = tape.constant(one_hot);

  ad::Var diff = features - ad::matmul(select, mu);
  ad::Var fit = -0.5 * ad::row_sum(ad::hadamard(ad::square(diff), noise_precision)) -
                ad::sum(log_sd) - half_n_log2pi;
  ad::Var trace_term =
      -0.5 * ad::row_sum(ad::hadamard(ad::matmul(select, class_var), noise_precision));

  std::vector<ad::Var> joint;
  joint.reserve(k);
  for (Index c = 0; c < k; ++c) {
    ad::Var var_c = noise_var + ad::row(class_var, c);
    ad::Var d = features - ad::row(mu, c);
    joint.push_back(-0.5 * ad::row_sum(ad::divide(ad::square(d), var_c)) -
                    0.5 * ad::sum(ad::log(var_c)) - half_n_log2pi);
  }
  Matrix log_alpha = posterior_.alpha().array().log().matrix().transpose();
  ad::Var lse = ad::logsumexp_rows(ad::hconcat(joint) + tape.constant(log_alpha));
  return ad::mean(fit + trace_term + tape.constant(dirichlet_terms) - lse);
}

RegularizerTerms GenerativeHead::regularizer(ad::Tape& tape, double dataset_size,
                                             double kl_weight) {
  require(dataset_size >= 1.0, "GenerativeHead::regularizer: T must be at least 1");
  ad::Var mu = tape.param(means_);
  ad::Var log_std = tape.param(log_std_);
  RegularizerTerms terms;
  terms.kl = tape.constant(dirichlet_kl());
  for (Index c = 0; c < output_dim(); ++c) {
    FactorVar s;
    s.layout = FactorLayout::diagonal;
    s.dim = feature_dim();
    s.log_diag = ad::transpose(ad::row(log_std, c));
    terms.kl = terms.kl + kl_head_to_prior(ad::row(mu, c), s, prior_mean_.row(c),
                                           priors_.prior_scale, 1);
  }
  // Sigma = diag(exp(2 l)): logdet Sigma^{-1} = -2 sum l, tr Sigma^{-1} = sum exp(-2 l).
  ad::Var l = tape.param(noise_.log_diag);
  terms.noise_log_prior =
      invwishart_logprior(-2.0 * ad::sum(l), ad::sum(ad::exp(-2.0 * l)), priors_.wishart);
  terms.total = (-kl_weight / dataset_size) * terms.kl + (1.0 / dataset_size) * terms.noise_log_prior;
  return terms;
}

std::vector<ad::Parameter*> GenerativeHead::parameters() {
  return {&means_, &log_std_, &noise_.log_diag};
}

void GenerativeHead::prepare(const Dataset& full) {
  require(full.is_classification(), "GenerativeHead::prepare: labels required");
  const std::vector<long> counts = class_counts(full.labels, output_dim());
  posterior_ = dirichlet_stats(prior_alpha_, counts);
}

std::vector<ad::Parameter*> GenerativeHead::noise_parameters() { return {&noise_.log_diag}; }

void GenerativeHead::initialize_mean(const Matrix& mean) { set_means(mean); }

Json GenerativeHead::to_json() const {
  Json j;
  j["kind"] = to_string(kind());
  j["features"] = feature_dim();
  j["outputs"] = output_dim();
  detail::write_priors(j, priors_);
  j["means"] = matrix_to_json(means_.values);
  j["log_std"] = matrix_to_json(log_std_.values);
  j["prior_mean"] = matrix_to_json(prior_mean_);
  detail::write_factor(j, "noise_covariance", noise_.value());
  j["prior_alpha"] = matrix_to_json(prior_alpha_);
  j["alpha"] = matrix_to_json(posterior_.alpha());
  return j;
}

GenerativeHead GenerativeHead::from_json(const Json& j) {
  require(j.at("kind").get<std::string>() == "generative", "GenerativeHead: wrong checkpoint kind");
  const Index nphi = j.at("features").get<Index>();
  const Index k = j.at("outputs").get<Index>();
  GenerativeHead head(nphi, k, detail::read_priors(j), read_array(j, "prior_alpha", k, 1).col(0));
  head.set_means(read_array(j, "means", k, nphi));
  head.set_log_std(read_array(j, "log_std", k, nphi));
  head.prior_mean_ = read_array(j, "prior_mean", k, nphi);
  TriangularFactor noise = detail::read_factor(j, "noise_covariance", nphi);
  require(noise.is_diagonal(), "GenerativeHead: noise covariance must be diagonal");
  head.noise_ = FactorParameters(noise);
  head.set_dirichlet(DirichletPosterior(read_array(j, "alpha", k, 1).col(0)));
  return head;
}

std::unique_ptr<VariationalHead> GenerativeHead::clone() const {
  return std::make_unique<GenerativeHead>(*this);
}

Vector GenerativeHead::class_log_density(const Vector& phi) const {
  require(phi.size() == feature_dim(), "GenerativeHead: feature width mismatch");
  const Vector noise = noise_variance();
  Vector out(output_dim());
  for (Index c = 0; c < output_dim(); ++c) {
    out(c) = gaussian_logpdf_diag(phi, means_.values.row(c).transpose(), noise + class_variance(c));
  }
  return out;
}

Vector GenerativeHead::predict(const Vector& phi) const {
  return softmax(class_log_density(phi) + posterior_.alpha().array().log().matrix());
}

double GenerativeHead::gaussian_kl() const {
  double total = 0.0;
  for (Index c = 0; c < output_dim(); ++c) {
    TriangularFactor s(log_std_.values.row(c).transpose());
    total += kl_head_to_prior(means_.values.row(c), s, prior_mean_.row(c), priors_.prior_scale, 1);
  }
  return total;
}

double GenerativeHead::dirichlet_kl() const {
  return vbll::dirichlet_kl(posterior_.alpha(), prior_alpha_);
}

double GenerativeHead::kl() const { return gaussian_kl() + dirichlet_kl(); }

double GenerativeHead::noise_log_prior() const {
  return invwishart_logprior_covariance(noise_.value(), priors_.wishart);
}

Vector GenerativeHead::class_variance(Index k) const {
  return (2.0 * log_std_.values.row(k).transpose().array()).exp();
}

Vector GenerativeHead::noise_variance() const {
  return (2.0 * noise_.log_diag.values.col(0).array()).exp();
}

void GenerativeHead::set_means(const Matrix& m) {
  require(m.rows() == output_dim() && m.cols() == feature_dim(), "set_means: shape mismatch");
  means_.values = m;
}

void GenerativeHead::set_log_std(const Matrix& log_std) {
  require(log_std.rows() == output_dim() && log_std.cols() == feature_dim(),
          "set_log_std: shape mismatch");
  log_std_.values = log_std;
}

void GenerativeHead::set_noise_variance(const Vector& variance) {
  require(variance.size() == feature_dim() && (variance.array() > 0.0).all(),
          "set_noise_variance: positive variances of length N_phi required");
  noise_.log_diag.values = (0.5 * variance.array().log()).matrix();
}

void GenerativeHead::set_dirichlet(const DirichletPosterior& posterior) {
  require(posterior.classes() == output_dim(), "set_dirichlet: class count mismatch");
  posterior_ = posterior;
}

}  // namespace vbll
