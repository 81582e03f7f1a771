#include "vbll/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace vbll {

RegressionMetrics regression_metrics(std::span<const GaussianMoments> predictions,
                                     const Matrix& targets) {
  require(!predictions.empty(), "regression_metrics: empty input");
  require(static_cast<Index>(predictions.size()) == targets.rows(),
          "regression_metrics: length mismatch");
  RegressionMetrics m;
  m.count = targets.rows();
  double sq = 0.0;
  for (Index i = 0; i < targets.rows(); ++i) {
    const GaussianMoments& p = predictions[i];
    const Vector y = targets.row(i).transpose();
    m.nll -= gaussian_logpdf_dense(y, p.mean, p.covariance);
    sq += (y - p.mean).squaredNorm();
  }
  const double n = static_cast<double>(m.count);
  m.nll /= n;
  m.rmse = std::sqrt(sq / (n * static_cast<double>(targets.cols())));
  return m;
}

Index argmax(const Vector& v) {
  require(v.size() > 0, "argmax: empty vector");
  Index best = 0;
  for (Index k = 1; k < v.size(); ++k) {
    if (v(k) > v(best)) best = k;
  }
  return best;
}

ClassificationMetrics classification_metrics(const Matrix& probs, std::span<const int> labels,
                                             int n_bins) {
  require(probs.rows() > 0, "classification_metrics: empty input");
  require(static_cast<Index>(labels.size()) == probs.rows(),
          "classification_metrics: length mismatch");
  require(n_bins >= 1, "classification_metrics: need at least one bin");
  ClassificationMetrics m;
  m.count = probs.rows();
  std::vector<double> bin_conf(n_bins, 0.0), bin_acc(n_bins, 0.0);
  std::vector<long> bin_count(n_bins, 0);
  long correct = 0;
  for (Index i = 0; i < probs.rows(); ++i) {
    const int y = labels[i];
    require(y >= 0 && y < probs.cols(), "classification_metrics: label out of range");
    const Vector p = probs.row(i).transpose();
    const Index pred = argmax(p);
    const bool hit = pred == y;
    correct += hit ? 1 : 0;
    m.nll -= std::log(p(y));
    const double conf = p(pred);
    int b = static_cast<int>(std::ceil(conf * n_bins)) - 1;
    b = std::clamp(b, 0, n_bins - 1);
    bin_conf[b] += conf;
    bin_acc[b] += hit ? 1.0 : 0.0;
    ++bin_count[b];
  }
  const double n = static_cast<double>(m.count);
  m.accuracy = static_cast<double>(correct) / n;
  m.nll /= n;
  for (int b = 0; b < n_bins; ++b) {
    if (bin_count[b] == 0) continue;
    const double nb = static_cast<double>(bin_count[b]);
    m.ece += (nb / n) * std::abs(bin_acc[b] / nb - bin_conf[b] / nb);
  }
  return m;
}

double auroc(std::span<const double> scores_in, std::span<const double> scores_out) {
  require(!scores_in.empty() && !scores_out.empty(), "auroc: both score sets must be nonempty");
  // Rank statistic: sort the pooled scores, give tied groups their average rank.
  const std::size_t n_in = scores_in.size();
  const std::size_t n = n_in + scores_out.size();
  std::vector<std::pair<double, bool>> pooled;
  pooled.reserve(n);
  for (double s : scores_in) pooled.emplace_back(s, true);
  for (double s : scores_out) pooled.emplace_back(s, false);
  std::sort(pooled.begin(), pooled.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  double rank_sum_in = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && pooled[j].first == pooled[i].first) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (pooled[k].second) rank_sum_in += avg_rank;
    }
    i = j;
  }
  const double a = static_cast<double>(n_in);
  const double b = static_cast<double>(scores_out.size());
  return (rank_sum_in - a * (a + 1.0) / 2.0) / (a * b);
}

double msp_score(const Vector& probs) {
  require(probs.size() > 0, "msp_score: empty probabilities");
  return probs.maxCoeff();
}

Json to_json(const RegressionMetrics& m) {
  return Json{{"nll", m.nll}, {"rmse", m.rmse}, {"count", m.count}};
}

Json to_json(const ClassificationMetrics& m) {
  return Json{{"accuracy", m.accuracy}, {"nll", m.nll}, {"ece", m.ece}, {"count", m.count}};
}

}  // namespace vbll
