#pragma once

#include "vbll/distributions.hpp"
#include "vbll/types.hpp"

namespace vbll {

/// Prior hyperparameters shared by the heads: isotropic prior scale s on the
/// last layer and the inverse-Wishart prior on the noise covariance.
struct HeadPriors {
  double prior_scale = 1.0;
  WishartPrior wishart{};
};

/// Target-value view of the regularizer: l_hat and p_hat are the diagonal
/// values the noise covariance and posterior covariance are pulled towards,
/// alpha_sigma and alpha_s the strength of each pull.
struct ReformulatedHyperparams {
  double l_hat = 1.0;
  double p_hat = 1.0;
  double alpha_sigma = 1.0;
  double alpha_s = 1.0;
};

struct RawHyperparams {
  double prior_scale = 1.0;  // s
  double wishart_scale = 1.0;  // m
  double nu_tilde = 1.0;
  double kl_weight = 1.0;  // lambda

  HeadPriors priors() const { return {prior_scale, {nu_tilde, wishart_scale}}; }
};

/// s <- p_hat, m <- alpha_sigma, lambda <- p_hat T alpha_s / N_y,
/// nu_tilde <- l_hat alpha_sigma.
RawHyperparams map_hyperparams(const ReformulatedHyperparams& h, double dataset_size,
                               Index n_outputs);

/// Minimizer of a exp(2p) - 2 b p over p: p* = 1/2 log(b / a).
double regularizer_minimizer(double a, double b);

}  // namespace vbll
