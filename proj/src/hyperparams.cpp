#include "vbll/hyperparams.hpp"

#include <cmath>

namespace vbll {

RawHyperparams map_hyperparams(const ReformulatedHyperparams& h, double dataset_size,
                               Index n_outputs) {
  require(h.l_hat > 0.0 && h.p_hat > 0.0 && h.alpha_sigma > 0.0 && h.alpha_s > 0.0,
          "map_hyperparams: all hyperparameters must be positive");
  require(dataset_size > 0.0 && n_outputs > 0, "map_hyperparams: T and N_y must be positive");
  RawHyperparams raw;
  raw.prior_scale = h.p_hat;
  raw.wishart_scale = h.alpha_sigma;
  raw.kl_weight = h.p_hat * dataset_size * h.alpha_s / static_cast<double>(n_outputs);
  raw.nu_tilde = h.l_hat * h.alpha_sigma;
  return raw;
}

double regularizer_minimizer(double a, double b) {
  require(a > 0.0 && b > 0.0, "regularizer_minimizer: coefficients must be positive");
  return 0.5 * std::log(b / a);
}

}  // namespace vbll
