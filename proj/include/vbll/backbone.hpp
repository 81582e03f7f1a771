#pragma once

// Leaky-ReLU MLP feature map phi(x, theta). Layer widths run from the input
// to the feature dimension; every affine layer is followed by the activation,
// and a layer whose input and output widths match adds its input back when
// `residual` is set. A single width means identity features.
//
// Weights are either point estimates (map) or mean-field Gaussians (variational),
// sampled by reparameterization for collapsed training.

#include <optional>
#include <span>
#include <vector>

#include "vbll/autodiff.hpp"
#include "vbll/checkpoint.hpp"
#include "vbll/types.hpp"

namespace vbll {

enum class WeightMode { map, variational };

struct MLPConfig {
  std::vector<Index> widths{1};
  double negative_slope = 0.01;
  bool residual = false;
  /// Gaussian prior precision on map weights: log p(theta) = -1/2 wd ||theta||^2.
  double weight_decay = 0.0;
  WeightMode mode = WeightMode::map;
  /// Prior std of variational weights. Non-positive means 2 / n_in^(1/4), i.e.
  /// variance 4 / sqrt(n_in) for each layer.
  double weight_prior_std = 0.0;
  double init_log_std = -5.0;
  bool train_log_std = true;

  Index input_dim() const { return widths.front(); }
  Index feature_dim() const { return widths.back(); }
  std::size_t layer_count() const { return widths.size() - 1; }
  void validate() const;
};

/// weight is n_in x n_out; bias is 1 x n_out.
struct DenseLayer {
  Matrix weight;
  Matrix bias;
};

struct VariationalLayer {
  DenseLayer mean;
  DenseLayer log_std;
};

using VariationalWeights = std::vector<VariationalLayer>;

/// Deterministic forward pass for one input.
Vector mlp_forward(const MLPConfig& config, std::span<const DenseLayer> layers, const Vector& x);
Matrix mlp_forward_batch(const MLPConfig& config, std::span<const DenseLayer> layers,
                         const Matrix& x);

struct BbbSample {
  Vector features;
  double weight_kl = 0.0;
};

/// theta = mean + exp(log_std) * z, forward with theta, plus KL(q(theta) || prior).
BbbSample bbb_sample_forward(const MLPConfig& config, const VariationalWeights& weights,
                             const Vector& x, Rng& rng);

/// sum over weights of KL(N(m, sd^2) || N(0, prior_sd^2)).
double gaussian_weight_kl(const Matrix& mean, const Matrix& log_std, double prior_std);
/// Prior std used for a layer with `n_in` inputs.
double layer_prior_std(const MLPConfig& config, Index n_in);

class Backbone {
 public:
  Backbone() = default;
  /// Uniform(-1/sqrt(n_in), 1/sqrt(n_in)) initialization of weights and biases.
  Backbone(MLPConfig config, Rng& init_rng);

  const MLPConfig& config() const { return config_; }
  Index input_dim() const { return config_.input_dim(); }
  Index feature_dim() const { return config_.feature_dim(); }
  bool is_identity() const { return config_.layer_count() == 0; }
  bool variational() const { return config_.mode == WeightMode::variational; }

  /// Features on the tape for a batch X (B x N_x). Variational weights are
  /// sampled once with `weight_noise` when given and set to their means otherwise.
  ad::Var forward(ad::Tape& tape, const Matrix& x, Rng* weight_noise = nullptr);
  /// Features with map weights or variational means.
  Matrix features(const Matrix& x) const;
  /// Features under one weight sample (variational mode).
  Matrix sample_features(const Matrix& x, Rng& rng) const;

  /// -1/2 wd ||theta||^2 (map mode; zero for variational weights).
  ad::Var log_prior(ad::Tape& tape);
  double log_prior() const;
  /// KL(q(theta) || p(theta)) (variational mode; zero for map weights).
  ad::Var weight_kl(ad::Tape& tape);
  double weight_kl() const;

  std::vector<ad::Parameter*> parameters();
  std::vector<DenseLayer> dense_layers() const;
  VariationalWeights variational_weights() const;
  void set_dense_layers(std::span<const DenseLayer> layers);

  /// Sets every variational log std (used to freeze weight noise near zero).
  void set_log_std(double value);

  Json to_json() const;
  static Backbone from_json(const Json& j);

 private:
  struct Layer {
    ad::Parameter weight;
    ad::Parameter bias;
    ad::Parameter weight_log_std;
    ad::Parameter bias_log_std;
  };

  MLPConfig config_;
  std::vector<Layer> layers_;
};

Json to_json(const MLPConfig& config);
MLPConfig mlp_config_from_json(const Json& j);

}  // namespace vbll
