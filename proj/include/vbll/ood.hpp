#pragma once

#include <vector>

#include "vbll/distributions.hpp"
#include "vbll/generative_head.hpp"
#include "vbll/types.hpp"

namespace vbll {

/// LSE_y(log N(phi | mu_bar_y, Sigma + S_y) + log alpha_y - log alpha_*), the
/// log feature density under the head. With `normalize_by_prior` the log
/// density of phi under the feature prior N(mu_prior, sI) is subtracted.
double gen_density_score(const GenerativeHead& head, const Vector& phi, bool normalize_by_prior);

struct ClassGaussian {
  Vector mean;
  Vector variance;  // diagonal layout
  Matrix covariance;  // dense layout
  bool diagonal = true;
};

/// Per-class MAP fit: mean = class feature mean;
/// Sigma_y = (m I + scatter) / (T_y + nu + N + 1) = (m I + scatter) / (T_y + nu_tilde).
/// The diagonal layout keeps only the diagonal of the scatter.
std::vector<ClassGaussian> map_covariance_calibration(const Matrix& features,
                                                      std::span<const int> labels, Index classes,
                                                      const WishartPrior& wishart, bool diagonal);

/// Density score with calibrated per-class covariances in place of Sigma + S_y,
/// weighted by the head's Dirichlet posterior mean.
double calibrated_density_score(const GenerativeHead& head,
                                const std::vector<ClassGaussian>& calibrated, const Vector& phi);

}  // namespace vbll
