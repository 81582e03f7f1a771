#include "oracles.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace vbll::oracle {

namespace {

constexpr double kLogTwoPi = 1.8378770664093454835606594728112;

/// Cholesky factor of a symmetric PSD matrix; a zero matrix gives a zero factor.
Matrix cholesky(const Matrix& cov) {
  if (cov.isZero(0.0)) return Matrix::Zero(cov.rows(), cov.cols());
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("oracle: matrix is not SPD");
  return llt.matrixL();
}

Vector normals(Index n, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector z(n);
  for (Index i = 0; i < n; ++i) z(i) = normal(rng);
  return z;
}

/// log N(. | mean, cov) with the factorization done once.
struct LogDensity {
  explicit LogDensity(const Matrix& cov) : llt(cov) {
    if (llt.info() != Eigen::Success) throw std::invalid_argument("oracle: covariance not SPD");
    const Matrix l = llt.matrixL();
    log_det = 2.0 * l.diagonal().array().log().sum();
  }
  double operator()(const Vector& y, const Vector& mean) const {
    const Vector z = llt.matrixL().solve(y - mean);
    return -0.5 * (z.squaredNorm() + log_det + static_cast<double>(y.size()) * kLogTwoPi);
  }
  Eigen::LLT<Matrix> llt;
  double log_det = 0.0;
};

double log_sum_exp(const Vector& v) {
  const double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

double diag_logpdf(const Vector& x, const Vector& mean, const Vector& var) {
  return -0.5 * (((x - mean).array().square() / var.array()).sum() + var.array().log().sum() +
                 static_cast<double>(x.size()) * kLogTwoPi);
}

void check_samples(long n) {
  if (n < 10000) throw std::invalid_argument("oracle: at least 1e4 samples required");
}

}  // namespace

MCEstimate mc_mean(const std::function<double(Rng&)>& draw, long n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("mc_mean: need n >= 2");
  // Welford accumulation.
  double mean = 0.0;
  double m2 = 0.0;
  for (long i = 0; i < n; ++i) {
    const double v = draw(rng);
    const double delta = v - mean;
    mean += delta / static_cast<double>(i + 1);
    m2 += delta * (v - mean);
  }
  const double var = m2 / static_cast<double>(n - 1);
  return {mean, std::sqrt(var / static_cast<double>(n)), n};
}

Vector draw_gaussian(const Vector& mean, const Matrix& cov, Rng& rng) {
  return mean + cholesky(cov) * normals(mean.size(), rng);
}

double dense_logpdf(const Vector& y, const Vector& mean, const Matrix& cov) {
  return LogDensity(cov)(y, mean);
}

MCEstimate mc_expected_loglik_linear(const Vector& y, const Matrix& design, const Vector& mu_bar,
                                     const Matrix& s, const Matrix& sigma, long n, Rng& rng) {
  check_samples(n);
  const Matrix l = cholesky(s);
  const LogDensity density(sigma);
  return mc_mean(
      [&](Rng& r) {
        const Vector mu = mu_bar + l * normals(mu_bar.size(), r);
        return density(y, design * mu);
      },
      n, rng);
}

MCEstimate mc_expected_loglik_identity(const Vector& y, const Vector& mu_bar, const Matrix& s,
                                       const Matrix& sigma, long n, Rng& rng) {
  return mc_expected_loglik_linear(y, Matrix::Identity(y.size(), y.size()), mu_bar, s, sigma, n,
                                   rng);
}

MCEstimate mc_expected_loglik_matrix_normal(const Vector& y, const Vector& x, const Matrix& w_bar,
                                            const Matrix& s, const Matrix& sigma, long n, Rng& rng) {
  check_samples(n);
  const Matrix l = cholesky(s);
  const LogDensity density(sigma);
  return mc_mean(
      [&](Rng& r) {
        Matrix w = w_bar;
        for (Index i = 0; i < w.rows(); ++i) {
          w.row(i) += (l * normals(w.cols(), r)).transpose();
        }
        return density(y, w * x);
      },
      n, rng);
}

MCEstimate mc_marginal_density(const Vector& x, const Vector& mu_bar, const Matrix& s,
                               const Matrix& sigma, long n, Rng& rng) {
  check_samples(n);
  const Matrix l = cholesky(s);
  const LogDensity density(sigma);
  return mc_mean(
      [&](Rng& r) { return std::exp(density(x, mu_bar + l * normals(mu_bar.size(), r))); }, n,
      rng);
}

MCEstimate mc_kl(const Vector& mean_q, const Matrix& cov_q, const Vector& mean_p,
                 const Matrix& cov_p, long n, Rng& rng) {
  check_samples(n);
  const Matrix l = cholesky(cov_q);
  const LogDensity q(cov_q);
  const LogDensity p(cov_p);
  return mc_mean(
      [&](Rng& r) {
        const Vector w = mean_q + l * normals(mean_q.size(), r);
        return q(w, mean_q) - p(w, mean_p);
      },
      n, rng);
}

Vector draw_dirichlet(const Vector& alpha, Rng& rng) {
  Vector g(alpha.size());
  for (Index k = 0; k < alpha.size(); ++k) {
    std::gamma_distribution<double> gamma(alpha(k), 1.0);
    g(k) = gamma(rng);
  }
  return g / g.sum();
}

MCEstimate mc_dirichlet_expected_log(const Vector& alpha, Index k, long n, Rng& rng) {
  check_samples(n);
  return mc_mean([&](Rng& r) { return std::log(draw_dirichlet(alpha, r)(k)); }, n, rng);
}

BlrPosterior exact_blr_posterior(const Matrix& phi, const Matrix& y, double prior_scale,
                                 const Matrix& sigma) {
  if (prior_scale <= 0.0) throw std::invalid_argument("exact_blr_posterior: prior scale <= 0");
  const Index t_count = phi.rows();
  const Index nf = phi.cols();
  const Index ny = sigma.rows();
  if (y.rows() != t_count || y.cols() != ny) {
    throw std::invalid_argument("exact_blr_posterior: shape mismatch");
  }
  const Index d = ny * nf;
  Vector mean = Vector::Zero(d);
  Matrix cov = prior_scale * Matrix::Identity(d, d);
  double log_ml = 0.0;
  for (Index t = 0; t < t_count; ++t) {
    // y_t = A w + eps with A = I_{N_y} kron phi_t^T acting on the row-stacked w.
    Matrix a = Matrix::Zero(ny, d);
    for (Index i = 0; i < ny; ++i) a.block(i, i * nf, 1, nf) = phi.row(t);
    const Matrix pred_cov = a * cov * a.transpose() + sigma;
    Eigen::LLT<Matrix> llt(pred_cov);
    if (llt.info() != Eigen::Success) {
      throw std::invalid_argument("exact_blr_posterior: singular predictive covariance");
    }
    const Vector yt = y.row(t).transpose();
    const Vector resid = yt - a * mean;
    log_ml += LogDensity(pred_cov)(yt, a * mean);
    const Matrix gain = llt.solve(a * cov).transpose();  // cov A^T pred_cov^{-1}
    mean += gain * resid;
    cov -= gain * a * cov;
    cov = 0.5 * (cov + cov.transpose());
  }
  BlrPosterior out;
  out.mean = Matrix(ny, nf);
  for (Index i = 0; i < ny; ++i) out.mean.row(i) = mean.segment(i * nf, nf).transpose();
  out.covariance = cov;
  out.log_marginal = log_ml;
  return out;
}

MCEstimate mc_log_marginal(const std::function<double(Rng&)>& log_likelihood_of_prior_draw,
                           long n, Rng& rng) {
  if (n < 2) throw std::invalid_argument("mc_log_marginal: need n >= 2");
  std::vector<double> ll(static_cast<std::size_t>(n));
  for (auto& v : ll) v = log_likelihood_of_prior_draw(rng);
  double top = ll.front();
  for (double v : ll) top = std::max(top, v);
  double sum = 0.0;
  double sum_sq = 0.0;
  for (double v : ll) {
    const double w = std::exp(v - top);
    sum += w;
    sum_sq += w * w;
  }
  const double dn = static_cast<double>(n);
  const double mean_w = sum / dn;
  const double var_w = std::max(0.0, (sum_sq - dn * mean_w * mean_w) / (dn - 1.0));
  return {top + std::log(mean_w), std::sqrt(var_w / dn) / mean_w, n};
}

MCEstimate mc_log_marginal_regression(const Matrix& phi, const Matrix& y, const Matrix& prior_mean,
                                      double prior_scale, const Matrix& sigma, long n, Rng& rng) {
  const LogDensity density(sigma);
  const double sd = std::sqrt(prior_scale);
  return mc_log_marginal(
      [&](Rng& r) {
        Matrix w = prior_mean;
        for (Index i = 0; i < w.rows(); ++i) w.row(i) += sd * normals(w.cols(), r).transpose();
        double total = 0.0;
        for (Index t = 0; t < phi.rows(); ++t) {
          total += density(y.row(t).transpose(), w * phi.row(t).transpose());
        }
        return total;
      },
      n, rng);
}

MCEstimate mc_log_marginal_softmax(const Matrix& phi, std::span<const int> labels,
                                   const Matrix& prior_mean, double prior_scale, long n, Rng& rng) {
  const double sd = std::sqrt(prior_scale);
  return mc_log_marginal(
      [&](Rng& r) {
        Matrix w = prior_mean;
        for (Index i = 0; i < w.rows(); ++i) w.row(i) += sd * normals(w.cols(), r).transpose();
        double total = 0.0;
        for (Index t = 0; t < phi.rows(); ++t) {
          const Vector z = w * phi.row(t).transpose();
          total += z(labels[t]) - log_sum_exp(z);
        }
        return total;
      },
      n, rng);
}

MCEstimate mc_log_marginal_gda(const Matrix& phi, std::span<const int> labels,
                               const Matrix& prior_mean, double prior_scale,
                               const Vector& noise_variance, const Vector& prior_alpha, long n,
                               Rng& rng) {
  const double sd = std::sqrt(prior_scale);
  const Index k_count = prior_mean.rows();
  return mc_log_marginal(
      [&](Rng& r) {
        Matrix mu = prior_mean;
        for (Index k = 0; k < k_count; ++k) mu.row(k) += sd * normals(mu.cols(), r).transpose();
        const Vector rho = draw_dirichlet(prior_alpha, r);
        double total = 0.0;
        Vector joint(k_count);
        for (Index t = 0; t < phi.rows(); ++t) {
          const Vector x = phi.row(t).transpose();
          for (Index k = 0; k < k_count; ++k) {
            joint(k) = std::log(rho(k)) + diag_logpdf(x, mu.row(k).transpose(), noise_variance);
          }
          total += joint(labels[t]) - log_sum_exp(joint);
        }
        return total;
      },
      n, rng);
}

MCEstimate mc_softmax_expected_loglik(const Matrix& phi, std::span<const int> labels,
                                      const Matrix& w_bar, const std::vector<Matrix>& s,
                                      const Vector& noise_variance, long n, Rng& rng) {
  const Index k_count = w_bar.rows();
  std::vector<Matrix> factors;
  for (const Matrix& sk : s) factors.push_back(cholesky(sk));
  const Vector noise_sd = noise_variance.array().sqrt();
  return mc_mean(
      [&](Rng& r) {
        Matrix w = w_bar;
        for (Index k = 0; k < k_count; ++k) {
          w.row(k) += (factors[k] * normals(w.cols(), r)).transpose();
        }
        double total = 0.0;
        for (Index t = 0; t < phi.rows(); ++t) {
          const Vector z =
              w * phi.row(t).transpose() + (noise_sd.array() * normals(k_count, r).array()).matrix();
          total += z(labels[t]) - log_sum_exp(z);
        }
        return total;
      },
      n, rng);
}

Matrix materialize_lower(const Matrix& off_diag, const Vector& log_diag) {
  const Index n = log_diag.size();
  Matrix l = Matrix::Zero(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < i; ++j) l(i, j) = off_diag(i, j);
    l(i, i) = std::exp(log_diag(i));
  }
  return l;
}

double dense_quad_form(const Matrix& lower, const Vector& v) {
  const Matrix m = lower * lower.transpose();
  return v.dot(m * v);
}

double dense_trace(const Matrix& lower) { return (lower * lower.transpose()).trace(); }

double dense_logdet(const Matrix& lower) {
  return std::log((lower * lower.transpose()).determinant());
}

GdaPosterior exact_gda_posterior(const Matrix& phi, std::span<const int> labels, Index classes,
                                 const Matrix& prior_mean, double prior_scale,
                                 const Vector& noise_variance, const Vector& prior_alpha) {
  const Index nf = phi.cols();
  GdaPosterior out;
  out.means = Matrix::Zero(classes, nf);
  out.variances = Matrix::Zero(classes, nf);
  out.alpha = prior_alpha;
  Matrix sums = Matrix::Zero(classes, nf);
  Vector counts = Vector::Zero(classes);
  for (Index t = 0; t < phi.rows(); ++t) {
    sums.row(labels[t]) += phi.row(t);
    counts(labels[t]) += 1.0;
  }
  for (Index k = 0; k < classes; ++k) {
    out.alpha(k) += counts(k);
    for (Index j = 0; j < nf; ++j) {
      const double precision = counts(k) / noise_variance(j) + 1.0 / prior_scale;
      out.variances(k, j) = 1.0 / precision;
      out.means(k, j) =
          out.variances(k, j) * (sums(k, j) / noise_variance(j) + prior_mean(k, j) / prior_scale);
    }
  }
  return out;
}

Vector gda_bayes_rule(const Vector& phi, const Matrix& means, const Matrix& variances,
                      const Vector& weights) {
  const Index k_count = means.rows();
  Vector joint(k_count);
  for (Index k = 0; k < k_count; ++k) {
    const Vector var = variances.row(k).transpose();
    const Vector diff = phi - means.row(k).transpose();
    double density = weights(k);
    for (Index j = 0; j < phi.size(); ++j) {
      density *= std::exp(-0.5 * diff(j) * diff(j) / var(j)) /
                 std::sqrt(2.0 * std::numbers::pi * var(j));
    }
    joint(k) = density;
  }
  return joint / joint.sum();
}

double pair_count_auroc(std::span<const double> in, std::span<const double> out) {
  double wins = 0.0;
  for (double a : in) {
    for (double b : out) {
      if (a > b) {
        wins += 1.0;
      } else if (a == b) {
        wins += 0.5;
      }
    }
  }
  return wins / (static_cast<double>(in.size()) * static_cast<double>(out.size()));
}

}  // namespace vbll::oracle
