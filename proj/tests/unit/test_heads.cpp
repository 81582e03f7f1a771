#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "oracles.hpp"
#include "vbll/discriminative_head.hpp"
#include "vbll/generative_head.hpp"
#include "vbll/hyperparams.hpp"
#include "vbll/regression_head.hpp"
#include "vbll/special.hpp"

namespace {

using namespace vbll;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

TriangularFactor random_factor(Index dim, Rng& rng, double log_scale = 0.3) {
  return TriangularFactor(standard_normal(dim, dim, rng) * 0.4,
                          standard_normal(dim, 1, rng) * log_scale);
}

TriangularFactor zero_factor(Index dim) {
  return TriangularFactor(Matrix::Zero(dim, dim), Vector::Constant(dim, kNegInf));
}

double eval_loss(VariationalHead& head, const Matrix& phi, const Dataset& batch) {
  ad::Tape t;
  return head.loss(t, t.constant(phi), batch).scalar();
}

Dataset regression_batch(const Matrix& y) {
  Dataset d;
  d.X = Matrix::Zero(y.rows(), 1);
  d.Y = y;
  return d;
}

Dataset label_batch(std::vector<int> labels) {
  Dataset d;
  d.X = Matrix::Zero(static_cast<Index>(labels.size()), 1);
  d.labels = std::move(labels);
  return d;
}

RegressionHead random_regression_head(Index nf, Index ny, Rng& rng) {
  RegressionHead head(nf, ny, HeadPriors{0.7, {2.0, 1.3}});
  head.set_mean(standard_normal(ny, nf, rng));
  head.set_covariance(random_factor(nf, rng));
  head.set_noise_precision(random_factor(ny, rng));
  return head;
}

// ---- regression head ----

TEST(RegressionHead, ZeroFeaturesGiveGaussianLoglik) {
  Rng rng = make_rng(1, Stream::oracle);
  RegressionHead head = random_regression_head(3, 2, rng);
  const Matrix y = standard_normal(5, 2, rng);
  double expected = 0.0;
  for (Index t = 0; t < 5; ++t) {
    expected += gaussian_logpdf(y.row(t).transpose(), Vector::Zero(2), head.noise_precision());
  }
  EXPECT_NEAR(eval_loss(head, Matrix::Zero(5, 3), regression_batch(y)), expected / 5.0, 1e-12);
}

TEST(RegressionHead, ZeroCovarianceIsMeanLoglik) {
  Rng rng = make_rng(2, Stream::oracle);
  RegressionHead head = random_regression_head(3, 2, rng);
  head.set_covariance(zero_factor(3));
  const Matrix phi = standard_normal(6, 3, rng);
  const Matrix y = standard_normal(6, 2, rng);
  double expected = 0.0;
  for (Index t = 0; t < 6; ++t) {
    expected += gaussian_logpdf(y.row(t).transpose(), head.mean() * phi.row(t).transpose(),
                                head.noise_precision());
  }
  EXPECT_NEAR(eval_loss(head, phi, regression_batch(y)), expected / 6.0, 1e-12);
}

TEST(RegressionHead, LossMatchesMonteCarlo) {
  Rng rng = make_rng(3, Stream::oracle);
  Rng mc = make_rng(3, 100);
  RegressionHead head = random_regression_head(4, 2, rng);
  const Matrix phi = standard_normal(3, 4, rng);
  const Matrix y = standard_normal(3, 2, rng);
  const Matrix sigma = head.noise_covariance();
  double closed = 0.0;
  for (Index t = 0; t < 3; ++t) {
    const auto est = oracle::mc_expected_loglik_matrix_normal(
        y.row(t).transpose(), phi.row(t).transpose(), head.mean(), head.covariance().matrix(),
        sigma, 200000, mc);
    const double exact = expected_loglik_matrix_normal(y.row(t).transpose(), phi.row(t).transpose(),
                                                       head.mean(), head.covariance(),
                                                       head.noise_precision());
    EXPECT_LE(std::abs(exact - est.mean), 3.0 * est.std_error);
    closed += exact;
  }
  EXPECT_NEAR(eval_loss(head, phi, regression_batch(y)), closed / 3.0, 1e-12);
}

TEST(RegressionHead, PredictExamples) {
  Rng rng = make_rng(4, Stream::oracle);
  RegressionHead head = random_regression_head(2, 2, rng);
  head.set_covariance(zero_factor(2));
  const Vector phi = standard_normal(2, 1, rng);
  auto p = head.predict(phi);
  EXPECT_LE((p.mean - head.mean() * phi).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LE((p.covariance - head.noise_covariance()).cwiseAbs().maxCoeff(), 1e-12);

  head.set_covariance(TriangularFactor::identity(2));
  head.set_noise_precision(TriangularFactor::identity(2));
  Vector unit(2);
  unit << 1.0, 0.0;
  p = head.predict(unit);
  EXPECT_LE((p.covariance - 2.0 * Matrix::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(RegressionHead, PredictiveDensityMatchesMonteCarlo) {
  Rng rng = make_rng(5, Stream::oracle);
  RegressionHead head = random_regression_head(3, 2, rng);
  const Vector phi = standard_normal(3, 1, rng);
  const Vector y = head.mean() * phi + standard_normal(2, 1, rng) * 0.5;
  const auto p = head.predict(phi);
  const double closed = std::exp(gaussian_logpdf_dense(y, p.mean, p.covariance));
  Rng mc = make_rng(5, 100);
  const Matrix sigma = head.noise_covariance();
  const auto est = oracle::mc_mean(
      [&](Rng& r) { return std::exp(oracle::dense_logpdf(y, head.sample_weights(r) * phi, sigma)); },
      200000, mc);
  EXPECT_LE(std::abs(closed - est.mean), 3.0 * est.std_error);
}

TEST(RegressionHead, TightAtExactPosterior) {
  Rng rng = make_rng(6, Stream::oracle);
  const Index t_count = 50;
  const Matrix phi = standard_normal(t_count, 3, rng);
  Vector w_true(3);
  w_true << 0.5, -1.0, 2.0;
  const double noise_sd = 0.4;
  Matrix y = phi * w_true + standard_normal(t_count, 1, rng) * noise_sd;
  const double s = 1.5;
  const Matrix sigma = Matrix::Constant(1, 1, noise_sd * noise_sd);
  const auto post = oracle::exact_blr_posterior(phi, y, s, sigma);

  RegressionHead head(3, 1, HeadPriors{s, {}});
  head.set_mean(post.mean);
  head.set_covariance(TriangularFactor::from_spd(post.covariance));
  head.set_noise_precision(TriangularFactor::from_spd(sigma.inverse()));
  const double bound = eval_loss(head, phi, regression_batch(y)) - head.kl() / t_count;
  EXPECT_NEAR(bound, post.log_marginal / t_count, 1e-8);

  // any other q is strictly looser
  RegressionHead other = head;
  other.set_mean(post.mean * 1.05);
  EXPECT_LT(eval_loss(other, phi, regression_batch(y)) - other.kl() / t_count, bound);
}

TEST(RegressionHead, MaskedLossMatchesUnmaskedForFullMask) {
  Rng rng = make_rng(7, Stream::oracle);
  RegressionHead head(3, 4, {}, FactorLayout::dense, FactorLayout::diagonal);
  head.set_mean(standard_normal(4, 3, rng));
  head.set_covariance(random_factor(3, rng));
  head.set_noise_precision(TriangularFactor(Vector(standard_normal(4, 1, rng) * 0.3)));
  const Matrix phi = standard_normal(5, 3, rng);
  Dataset batch = regression_batch(standard_normal(5, 4, rng));
  const double full = eval_loss(head, phi, batch);
  batch.observed = Matrix::Ones(5, 4);
  EXPECT_NEAR(eval_loss(head, phi, batch), full, 1e-12);
  // one observed entry per row contributes its univariate term
  batch.observed.setZero();
  for (Index t = 0; t < 5; ++t) batch.observed(t, t % 4) = 1.0;
  double expected = 0.0;
  const Vector lambda = (2.0 * head.noise_precision().log_diag()).array().exp();
  for (Index t = 0; t < 5; ++t) {
    const Index j = t % 4;
    const Vector x = phi.row(t).transpose();
    const double e = batch.Y(t, j) - head.mean().row(j).dot(x);
    expected += -0.5 * (e * e * lambda(j) - std::log(lambda(j)) + kLog2Pi) -
                0.5 * quad_form(head.covariance(), x) * lambda(j);
  }
  EXPECT_NEAR(eval_loss(head, phi, batch), expected / 5.0, 1e-12);
}

TEST(RegressionHead, ShapeMismatchThrows) {
  RegressionHead head(3, 2);
  ad::Tape t;
  EXPECT_THROW(head.loss(t, t.constant(Matrix::Zero(4, 2)), regression_batch(Matrix::Zero(4, 2))),
               std::invalid_argument);
  EXPECT_THROW(head.loss(t, t.constant(Matrix::Zero(4, 3)), regression_batch(Matrix::Zero(4, 1))),
               std::invalid_argument);
}

// ---- regularizer ----

TEST(Regularizer, PriorHeadHasZeroKl) {
  RegressionHead head(3, 2, HeadPriors{2.0, {}});
  head.set_covariance(TriangularFactor::from_spd(2.0 * Matrix::Identity(3, 3)));
  EXPECT_NEAR(head.kl(), 0.0, 1e-13);
  ad::Tape t;
  EXPECT_NEAR(head.regularizer(t, 10.0, 1.0).kl.scalar(), 0.0, 1e-13);
}

TEST(Regularizer, CompositionAndScaling) {
  Rng rng = make_rng(8, Stream::oracle);
  RegressionHead head = random_regression_head(4, 2, rng);
  head.set_prior_mean(standard_normal(2, 4, rng));
  const double t_size = 37.0;
  const double lambda = 0.6;
  ad::Tape t1;
  const double r1 = head.regularizer(t1, t_size, lambda).total.scalar();
  const double kl = kl_head_to_prior(head.mean(), head.covariance(), head.prior_mean(),
                                     head.priors().prior_scale, 2);
  const double lp = invwishart_logprior(head.noise_precision(), head.priors().wishart);
  EXPECT_NEAR(r1, (lambda / t_size) * (-kl) + lp / t_size, 1e-12);
  ad::Tape t2;
  EXPECT_NEAR(head.regularizer(t2, 2.0 * t_size, lambda).total.scalar(), 0.5 * r1, 1e-14);
}

TEST(Regularizer, DiscriminativeAndGenerativeComposition) {
  Rng rng = make_rng(9, Stream::oracle);
  DiscriminativeHead disc(3, 4, HeadPriors{0.8, {2.0, 1.5}});
  disc.set_mean(standard_normal(4, 3, rng));
  for (Index k = 0; k < 4; ++k) disc.set_covariance(k, random_factor(3, rng));
  disc.set_log_noise(standard_normal(4, 1, rng) * 0.3);
  double kl = 0.0;
  for (Index k = 0; k < 4; ++k) {
    kl += kl_head_to_prior(disc.mean().row(k), disc.covariance(k), Matrix::Zero(1, 3), 0.8, 1);
  }
  const Vector sd = disc.noise_variance().array().sqrt();
  const TriangularFactor noise_cov(Vector(sd.array().log()));
  const double lp = invwishart_logprior_covariance(noise_cov, disc.priors().wishart);
  ad::Tape t;
  EXPECT_NEAR(disc.regularizer(t, 20.0, 1.0).total.scalar(), -kl / 20.0 + lp / 20.0, 1e-12);

  GenerativeHead gen(3, 2, HeadPriors{1.2, {1.5, 0.5}});
  gen.set_means(standard_normal(2, 3, rng));
  gen.set_log_std(standard_normal(2, 3, rng) * 0.3);
  gen.set_noise_variance((standard_normal(3, 1, rng).array() * 0.3).exp());
  Vector a(2);
  a << 4.0, 7.0;
  gen.set_dirichlet(DirichletPosterior(a));
  double gkl = dirichlet_kl(a, gen.prior_alpha());
  for (Index k = 0; k < 2; ++k) {
    const TriangularFactor s(Vector(gen.class_variance(k).array().sqrt().log()));
    gkl += kl_head_to_prior(gen.means().row(k), s, Matrix::Zero(1, 3), 1.2, 1);
  }
  const TriangularFactor sigma(Vector(gen.noise_variance().array().sqrt().log()));
  const double glp = invwishart_logprior_covariance(sigma, gen.priors().wishart);
  EXPECT_NEAR(gen.kl(), gkl, 1e-12);
  ad::Tape t2;
  EXPECT_NEAR(gen.regularizer(t2, 9.0, 0.5).total.scalar(), -0.5 * gkl / 9.0 + glp / 9.0, 1e-12);
}

// ---- discriminative head ----

TEST(DiscriminativeHead, DeterministicCaseIsSoftmaxLoglik) {
  Rng rng = make_rng(10, Stream::oracle);
  DiscriminativeHead head(3, 4, {}, FactorLayout::dense, true);
  head.set_mean(standard_normal(4, 3, rng));
  for (Index k = 0; k < 4; ++k) head.set_covariance(k, zero_factor(3));
  const Matrix phi = standard_normal(6, 3, rng);
  const std::vector<int> labels{0, 1, 2, 3, 1, 2};
  double expected = 0.0;
  for (Index t = 0; t < 6; ++t) {
    const Vector z = head.mean() * phi.row(t).transpose();
    expected += z(labels[t]) - logsumexp(z);
  }
  EXPECT_NEAR(eval_loss(head, phi, label_batch(labels)), expected / 6.0, 1e-12);
}

TEST(DiscriminativeHead, IdenticalClassesGiveMinusLogTwo) {
  DiscriminativeHead head(2, 2, {}, FactorLayout::dense, true);
  Matrix w(2, 2);
  w << 0.3, -0.7, 0.3, -0.7;
  head.set_mean(w);
  for (Index k = 0; k < 2; ++k) head.set_covariance(k, zero_factor(2));
  Rng rng = make_rng(11, Stream::oracle);
  EXPECT_NEAR(eval_loss(head, standard_normal(4, 2, rng), label_batch({0, 1, 1, 0})),
              -std::log(2.0), 1e-14);
}

TEST(DiscriminativeHead, LossMatchesFormula) {
  Rng rng = make_rng(12, Stream::oracle);
  DiscriminativeHead head(3, 3);
  head.set_mean(standard_normal(3, 3, rng));
  for (Index k = 0; k < 3; ++k) head.set_covariance(k, random_factor(3, rng));
  head.set_log_noise(standard_normal(3, 1, rng) * 0.5);
  const Matrix phi = standard_normal(4, 3, rng);
  const std::vector<int> labels{2, 0, 1, 1};
  const Vector noise = head.noise_variance();
  double expected = 0.0;
  for (Index t = 0; t < 4; ++t) {
    const Vector x = phi.row(t).transpose();
    Vector scores(3);
    for (Index k = 0; k < 3; ++k) {
      scores(k) = head.mean().row(k).dot(x) + 0.5 * (quad_form(head.covariance(k), x) + noise(k));
    }
    expected += head.mean().row(labels[t]).dot(x) - logsumexp(scores);
  }
  EXPECT_NEAR(eval_loss(head, phi, label_batch(labels)), expected / 4.0, 1e-12);
}

TEST(DiscriminativeHead, LossBelowMonteCarloExpectation) {
  Rng rng = make_rng(13, Stream::oracle);
  DiscriminativeHead head(2, 3);
  head.set_mean(standard_normal(3, 2, rng));
  std::vector<Matrix> covs;
  for (Index k = 0; k < 3; ++k) {
    head.set_covariance(k, random_factor(2, rng));
    covs.push_back(head.covariance(k).matrix());
  }
  head.set_log_noise(standard_normal(3, 1, rng) * 0.5);
  const Matrix phi = standard_normal(5, 2, rng);
  const std::vector<int> labels{0, 1, 2, 2, 1};
  Rng mc = make_rng(13, 100);
  const auto est = oracle::mc_softmax_expected_loglik(phi, labels, head.mean(), covs,
                                                      head.noise_variance(), 100000, mc);
  EXPECT_LE(5.0 * eval_loss(head, phi, label_batch(labels)), est.mean + 3.0 * est.std_error);
}

TEST(DiscriminativeHead, PredictDeterministicAndSymmetric) {
  Rng rng = make_rng(14, Stream::oracle);
  DiscriminativeHead head(3, 4, {}, FactorLayout::dense, true);
  head.set_mean(standard_normal(4, 3, rng));
  for (Index k = 0; k < 4; ++k) head.set_covariance(k, zero_factor(3));
  const Vector phi = standard_normal(3, 1, rng);
  for (int k_samples : {1, 7}) {
    const Vector p = head.predict(phi, k_samples, rng);
    EXPECT_LE((p - softmax(head.mean() * phi)).cwiseAbs().maxCoeff(), 1e-15);
  }

  DiscriminativeHead sym(2, 2);
  Matrix w(2, 2);
  w << 0.5, 1.0, 0.5, 1.0;
  sym.set_mean(w);
  const Vector p = sym.predict(Vector::Ones(2), 100000, rng);
  EXPECT_NEAR(p(0), 0.5, 0.005);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(DiscriminativeHead, PredictSelfConsistentAcrossSampleCounts) {
  Rng rng = make_rng(15, Stream::oracle);
  DiscriminativeHead head(2, 3);
  head.set_mean(standard_normal(3, 2, rng));
  for (Index k = 0; k < 3; ++k) head.set_covariance(k, random_factor(2, rng));
  const Vector phi = standard_normal(2, 1, rng);
  Rng a = make_rng(1, 101);
  Rng b = make_rng(2, 101);
  const Vector p5 = head.predict(phi, 100000, a);
  const Vector p6 = head.predict(phi, 1000000, b);
  for (Index k = 0; k < 3; ++k) {
    // per-sample probabilities are bounded in [0, 1], variance at most 1/4
    const double se = std::sqrt(0.25 / 1e5 + 0.25 / 1e6);
    EXPECT_LE(std::abs(p5(k) - p6(k)), 3.0 * se);
  }
}

TEST(DiscriminativeHead, PredictShiftEquivariant) {
  Rng rng = make_rng(16, Stream::oracle);
  DiscriminativeHead head(3, 4);
  head.set_mean(standard_normal(4, 3, rng));
  for (Index k = 0; k < 4; ++k) head.set_covariance(k, random_factor(3, rng));
  const Vector phi = standard_normal(3, 1, rng);
  DiscriminativeHead shifted = head;
  Vector c(3);
  c << 0.0, 0.0, 0.0;
  c(0) = 5.0 / phi(0);  // adds 5 to every class score
  shifted.set_mean(head.mean().rowwise() + c.transpose());
  Rng a = make_rng(3, 102);
  Rng b = make_rng(3, 102);
  const Vector p = head.predict(phi, 20, a);
  const Vector q = shifted.predict(phi, 20, b);
  EXPECT_LE((p - q).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_TRUE((p.array() >= 0.0).all() && (p.array() <= 1.0).all());
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(DiscriminativeHead, LabelOutOfRangeThrows) {
  DiscriminativeHead head(2, 2);
  ad::Tape t;
  EXPECT_THROW(head.loss(t, t.constant(Matrix::Zero(1, 2)), label_batch({2})),
               std::invalid_argument);
}

// ---- generative head ----

GenerativeHead random_generative_head(Index nf, Index k, Rng& rng) {
  GenerativeHead head(nf, k, HeadPriors{1.3, {}});
  head.set_means(standard_normal(k, nf, rng));
  head.set_log_std(standard_normal(k, nf, rng) * 0.3 - Matrix::Constant(k, nf, 0.5));
  head.set_noise_variance((standard_normal(nf, 1, rng).array() * 0.3).exp());
  Vector alpha = (standard_normal(k, 1, rng).array().abs() * 3.0 + 1.0).matrix();
  head.set_dirichlet(DirichletPosterior(alpha));
  return head;
}

double generative_formula(const GenerativeHead& head, const Matrix& phi,
                          const std::vector<int>& labels) {
  const Vector sigma = head.noise_variance();
  const Vector alpha = head.dirichlet().alpha();
  const double a_star = alpha.sum();
  double total = 0.0;
  for (Index t = 0; t < phi.rows(); ++t) {
    const Vector x = phi.row(t).transpose();
    const int y = labels[t];
    double v = gaussian_logpdf_diag(x, head.means().row(y).transpose(), sigma);
    v -= 0.5 * (head.class_variance(y).array() / sigma.array()).sum();
    v += digamma(alpha(y)) - digamma(a_star) + std::log(a_star);
    Vector joint(head.output_dim());
    for (Index k = 0; k < head.output_dim(); ++k) {
      joint(k) = gaussian_logpdf_diag(x, head.means().row(k).transpose(),
                                      sigma + head.class_variance(k)) +
                 std::log(alpha(k));
    }
    total += v - logsumexp(joint);
  }
  return total / static_cast<double>(phi.rows());
}

TEST(GenerativeHead, LossMatchesFormula) {
  Rng rng = make_rng(17, Stream::oracle);
  GenerativeHead head = random_generative_head(3, 3, rng);
  const Matrix phi = standard_normal(5, 3, rng);
  const std::vector<int> labels{0, 2, 1, 1, 0};
  EXPECT_NEAR(eval_loss(head, phi, label_batch(labels)), generative_formula(head, phi, labels),
              1e-12);
}

TEST(GenerativeHead, ZeroCovarianceDropsTracePenalty) {
  Rng rng = make_rng(18, Stream::oracle);
  GenerativeHead head = random_generative_head(2, 2, rng);
  head.set_log_std(Matrix::Constant(2, 2, kNegInf));
  const Matrix phi = standard_normal(3, 2, rng);
  const std::vector<int> labels{1, 0, 1};
  EXPECT_NEAR(eval_loss(head, phi, label_batch(labels)), generative_formula(head, phi, labels),
              1e-12);
  EXPECT_LE((head.class_variance(0)).cwiseAbs().maxCoeff(), 0.0);
}

TEST(GenerativeHead, DirichletBlockHasNoGradient) {
  // Scaling alpha by c changes the psi block but shifts the LSE and log alpha_*
  // by the same log c, so gradients must not move while the loss does.
  Rng rng = make_rng(19, Stream::oracle);
  GenerativeHead a = random_generative_head(3, 2, rng);
  GenerativeHead b = a;
  b.set_dirichlet(DirichletPosterior(a.dirichlet().alpha() * 0.05));
  const Matrix phi = standard_normal(4, 3, rng);
  const Dataset batch = label_batch({0, 1, 1, 0});
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  const auto ga = ad::grad([&](ad::Tape& t) { return a.loss(t, t.constant(phi), batch); }, pa);
  const auto gb = ad::grad([&](ad::Tape& t) { return b.loss(t, t.constant(phi), batch); }, pb);
  EXPECT_GT(std::abs(ga.loss - gb.loss), 1e-3);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_LE((ga.gradients[i] - gb.gradients[i]).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GenerativeHead, BoundBelowMonteCarloLogMarginal) {
  GenerativeHead head(2, 2, HeadPriors{1.0, {}});
  Matrix phi(8, 2);
  phi << 1.0, 0.8, 1.2, 1.1, 0.7, 1.3, 1.1, 0.6, -1.0, -0.9, -1.2, -0.7, -0.8, -1.1, -0.6, -1.3;
  const std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
  Dataset batch = label_batch(labels);
  head.prepare(batch);
  const Vector sigma = Vector::Constant(2, 0.25);
  const auto post = oracle::exact_gda_posterior(phi, labels, 2, Matrix::Zero(2, 2), 1.0, sigma,
                                                head.prior_alpha());
  head.set_means(post.means);
  head.set_log_std(post.variances.array().sqrt().log().matrix());
  head.set_noise_variance(sigma);
  const double elbo = 8.0 * eval_loss(head, phi, batch) - head.kl();
  Rng mc = make_rng(20, 100);
  const auto est = oracle::mc_log_marginal_gda(phi, labels, Matrix::Zero(2, 2), 1.0, sigma,
                                               head.prior_alpha(), 200000, mc);
  EXPECT_LE(elbo, est.mean + 3.0 * est.std_error);
}

TEST(GenerativeHead, PredictExamples) {
  GenerativeHead head(2, 2);
  head.set_means(Matrix::Ones(2, 2));
  Vector equal(2);
  equal << 2.0, 2.0;
  head.set_dirichlet(DirichletPosterior(equal));
  Vector phi(2);
  phi << 0.3, -0.4;
  Vector p = head.predict(phi);
  EXPECT_NEAR(p(0), 0.5, 1e-15);
  Vector skew(2);
  skew << 3.0, 1.0;
  head.set_dirichlet(DirichletPosterior(skew));
  p = head.predict(phi);
  EXPECT_NEAR(p(0), 0.75, 1e-14);
  EXPECT_NEAR(p(1), 0.25, 1e-14);
}

TEST(GenerativeHead, ZeroCovarianceMatchesDirectBayesRule) {
  Rng rng = make_rng(21, Stream::oracle);
  GenerativeHead head = random_generative_head(3, 4, rng);
  head.set_log_std(Matrix::Constant(4, 3, kNegInf));
  Matrix variances(4, 3);
  for (Index k = 0; k < 4; ++k) variances.row(k) = head.noise_variance().transpose();
  for (int i = 0; i < 10; ++i) {
    const Vector phi = standard_normal(3, 1, rng);
    const Vector direct =
        oracle::gda_bayes_rule(phi, head.means(), variances, head.dirichlet().alpha());
    EXPECT_LE((head.predict(phi) - direct).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(GenerativeHead, PredictUsesMarginalCovariance) {
  Rng rng = make_rng(22, Stream::oracle);
  GenerativeHead head = random_generative_head(2, 3, rng);
  Matrix variances(3, 2);
  for (Index k = 0; k < 3; ++k) {
    variances.row(k) = (head.noise_variance() + head.class_variance(k)).transpose();
  }
  const Vector phi = standard_normal(2, 1, rng);
  const Vector direct =
      oracle::gda_bayes_rule(phi, head.means(), variances, head.dirichlet().alpha());
  const Vector p = head.predict(phi);
  EXPECT_LE((p - direct).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
}

TEST(GenerativeHead, PredictShiftEquivariant) {
  Rng rng = make_rng(23, Stream::oracle);
  GenerativeHead head = random_generative_head(3, 3, rng);
  GenerativeHead scaled = head;
  // scaling every alpha adds log c to every class score
  scaled.set_dirichlet(DirichletPosterior(head.dirichlet().alpha() * 17.0));
  const Vector phi = standard_normal(3, 1, rng);
  EXPECT_LE((head.predict(phi) - scaled.predict(phi)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GenerativeHead, PrepareCountsClasses) {
  GenerativeHead head(2, 3);
  head.prepare(label_batch({0, 0, 2, 2, 2}));
  EXPECT_DOUBLE_EQ(head.dirichlet().alpha()(0), 3.0);
  EXPECT_DOUBLE_EQ(head.dirichlet().alpha()(1), 1.0);
  EXPECT_DOUBLE_EQ(head.dirichlet().alpha()(2), 4.0);
}

// ---- checkpoints ----

TEST(HeadCheckpoint, RoundTripIsExact) {
  Rng rng = make_rng(24, Stream::oracle);
  RegressionHead reg = random_regression_head(3, 2, rng);
  DiscriminativeHead disc(3, 2);
  disc.set_mean(standard_normal(2, 3, rng));
  disc.set_covariance(1, random_factor(3, rng));
  disc.set_log_noise(standard_normal(2, 1, rng));
  GenerativeHead gen = random_generative_head(3, 2, rng);
  for (const VariationalHead* h : std::vector<const VariationalHead*>{&reg, &disc, &gen}) {
    const Json j = h->to_json();
    const auto back = head_from_json(Json::parse(j.dump()));
    EXPECT_EQ(back->to_json(), j);
    EXPECT_EQ(back->kind(), h->kind());
  }
  const RegressionHead r2 = RegressionHead::from_json(Json::parse(reg.to_json().dump()));
  EXPECT_EQ(r2.mean(), reg.mean());
  EXPECT_EQ(r2.covariance().lower(), reg.covariance().lower());
}

// ---- hyperparameter mapping ----

TEST(MapHyperparams, UnitCase) {
  const double t = 250.0;
  const Index ny = 2;
  const auto raw = map_hyperparams({1.0, 1.0, 1.0, static_cast<double>(ny) / t}, t, ny);
  EXPECT_DOUBLE_EQ(raw.prior_scale, 1.0);
  EXPECT_DOUBLE_EQ(raw.wishart_scale, 1.0);
  EXPECT_DOUBLE_EQ(raw.nu_tilde, 1.0);
  EXPECT_NEAR(raw.kl_weight, 1.0, 1e-15);
}

TEST(MapHyperparams, GeneralMappingAndErrors) {
  const auto raw = map_hyperparams({0.5, 2.0, 3.0, 0.1}, 100.0, 4);
  EXPECT_DOUBLE_EQ(raw.prior_scale, 2.0);
  EXPECT_DOUBLE_EQ(raw.wishart_scale, 3.0);
  EXPECT_DOUBLE_EQ(raw.nu_tilde, 1.5);
  EXPECT_NEAR(raw.kl_weight, 2.0 * 100.0 * 0.1 / 4.0, 1e-12);
  EXPECT_THROW(map_hyperparams({0.0, 1.0, 1.0, 1.0}, 10.0, 1), std::invalid_argument);
  EXPECT_THROW(map_hyperparams({1.0, -1.0, 1.0, 1.0}, 10.0, 1), std::invalid_argument);
}

TEST(MapHyperparams, RegularizerMinimizer) {
  EXPECT_NEAR(regularizer_minimizer(3.0, 3.0), 0.0, 1e-15);
  EXPECT_NEAR(regularizer_minimizer(100.0, 400.0), 0.5 * std::log(4.0), 1e-15);
  EXPECT_NEAR(0.5 * std::log(4.0), 0.6931, 1e-4);
  // numerical check of the minimum of a exp(2p) - 2 b p
  const double a = 100.0;
  const double b = 400.0;
  const double p_star = regularizer_minimizer(a, b);
  auto f = [&](double p) { return a * std::exp(2.0 * p) - 2.0 * b * p; };
  EXPECT_LT(f(p_star), f(p_star + 1e-3));
  EXPECT_LT(f(p_star), f(p_star - 1e-3));
}

TEST(MapHyperparams, NoiseRegularizerMinimumAtTarget) {
  // For a 1x1 noise precision lambda = exp(2p), (1/T) log p(Sigma) is
  // nu_tilde p - m/2 exp(2p) and peaks at exp(2p) = nu_tilde / m = l_hat.
  const double l_hat = 2.5;
  const auto raw = map_hyperparams({l_hat, 1.0, 4.0, 1.0}, 50.0, 1);
  double best_p = 0.0;
  double best = -1e300;
  for (double p = -2.0; p <= 2.0; p += 1e-4) {
    Vector ld(1);
    ld << p;
    const double v = invwishart_logprior(TriangularFactor(Matrix::Zero(1, 1), ld),
                                         raw.priors().wishart);
    if (v > best) {
      best = v;
      best_p = p;
    }
  }
  EXPECT_NEAR(std::exp(2.0 * best_p), l_hat, 1e-3);
}

}  // namespace
