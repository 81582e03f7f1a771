#pragma once

#include <span>
#include <vector>

#include "vbll/checkpoint.hpp"
#include "vbll/distributions.hpp"
#include "vbll/types.hpp"

namespace vbll {

struct RegressionMetrics {
  double nll = 0.0;
  double rmse = 0.0;
  Index count = 0;
};

struct ClassificationMetrics {
  double accuracy = 0.0;
  double nll = 0.0;
  double ece = 0.0;
  Index count = 0;
};

inline constexpr int kDefaultEceBins = 15;

/// Mean -log N(y | mean, cov) and the RMSE of the predictive means.
RegressionMetrics regression_metrics(std::span<const GaussianMoments> predictions,
                                     const Matrix& targets);

/// probs is N x K with rows summing to one. Accuracy takes the argmax with the
/// lowest index winning ties; ECE bins the max probability into n_bins
/// equal-width intervals (lo, hi], the first bin also holding 0.
ClassificationMetrics classification_metrics(const Matrix& probs, std::span<const int> labels,
                                             int n_bins = kDefaultEceBins);

/// P(in > out) + 1/2 P(in == out), in-distribution scores as the positive class.
double auroc(std::span<const double> scores_in, std::span<const double> scores_out);

/// max_k probs_k.
double msp_score(const Vector& probs);

/// Index of the largest entry, lowest index on ties.
Index argmax(const Vector& v);

Json to_json(const RegressionMetrics& m);
Json to_json(const ClassificationMetrics& m);

}  // namespace vbll
