#include "vbll/special.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace vbll {

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("logsumexp: empty input");
  const double m = *std::max_element(v.begin(), v.end());
  if (std::isinf(m) && m < 0) return -std::numeric_limits<double>::infinity();
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

double logsumexp(const Vector& v) { return logsumexp(std::span<const double>(v.data(), v.size())); }

Vector softmax(const Vector& scores) {
  const double lse = logsumexp(scores);
  return (scores.array() - lse).exp().matrix();
}

double digamma(double x) {
  if (!(x > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double shift = 0.0;
  while (x < 6.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // Bernoulli-number coefficients B_2k / (2k).
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 -
                              inv2 * (1.0 / 240.0 -
                                      inv2 * (1.0 / 132.0 -
                                              inv2 * (691.0 / 32760.0 - inv2 * (1.0 / 12.0)))))));
  return shift + std::log(x) - 0.5 * inv - series;
}

}  // namespace vbll
