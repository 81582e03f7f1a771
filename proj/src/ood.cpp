#include "vbll/ood.hpp"

#include <cmath>

#include "vbll/special.hpp"

namespace vbll {

double gen_density_score(const GenerativeHead& head, const Vector& phi, bool normalize_by_prior) {
  const Vector joint = head.class_log_density(phi) + head.dirichlet().log_expected();
  double score = logsumexp(joint);
  if (normalize_by_prior) {
    const Vector prior_var = Vector::Constant(phi.size(), head.priors().prior_scale);
    score -= gaussian_logpdf_diag(phi, head.prior_mean().row(0).transpose(), prior_var);
  }
  return score;
}

std::vector<ClassGaussian> map_covariance_calibration(const Matrix& features,
                                                      std::span<const int> labels, Index classes,
                                                      const WishartPrior& wishart, bool diagonal) {
  require(static_cast<Index>(labels.size()) == features.rows(),
          "map_covariance_calibration: label count mismatch");
  const Index n = features.cols();
  std::vector<ClassGaussian> out(classes);
  std::vector<long> counts(classes, 0);
  for (auto& g : out) g.mean = Vector::Zero(n);
  for (Index t = 0; t < features.rows(); ++t) {
    const int y = labels[t];
    require(y >= 0 && y < classes, "map_covariance_calibration: label out of range");
    out[y].mean += features.row(t).transpose();
    ++counts[y];
  }
  for (Index k = 0; k < classes; ++k) {
    require(counts[k] >= 1, "map_covariance_calibration: class " + std::to_string(k) + " is empty");
    out[k].mean /= static_cast<double>(counts[k]);
    out[k].diagonal = diagonal;
    if (diagonal) {
      out[k].variance = Vector::Constant(n, wishart.scale);
    } else {
      out[k].covariance = wishart.scale * Matrix::Identity(n, n);
    }
  }
  for (Index t = 0; t < features.rows(); ++t) {
    ClassGaussian& g = out[labels[t]];
    const Vector e = features.row(t).transpose() - g.mean;
    if (diagonal) {
      g.variance.array() += e.array().square();
    } else {
      g.covariance.noalias() += e * e.transpose();
    }
  }
  for (Index k = 0; k < classes; ++k) {
    const double denom = static_cast<double>(counts[k]) + wishart.nu_tilde;
    if (diagonal) {
      out[k].variance /= denom;
    } else {
      out[k].covariance /= denom;
    }
  }
  return out;
}

double calibrated_density_score(const GenerativeHead& head,
                                const std::vector<ClassGaussian>& calibrated, const Vector& phi) {
  require(static_cast<Index>(calibrated.size()) == head.output_dim(),
          "calibrated_density_score: class count mismatch");
  const Vector log_weight = head.dirichlet().log_expected();
  Vector joint(head.output_dim());
  for (Index k = 0; k < head.output_dim(); ++k) {
    const ClassGaussian& g = calibrated[k];
    const double ll = g.diagonal ? gaussian_logpdf_diag(phi, g.mean, g.variance)
                                 : gaussian_logpdf_dense(phi, g.mean, g.covariance);
    joint(k) = ll + log_weight(k);
  }
  return logsumexp(joint);
}

}  // namespace vbll
