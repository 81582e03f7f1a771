#pragma once

// Mini-batch maximization of
//   L_hat + (lambda / T)(-KL_head) + (1/T) log p(Sigma) + (1/T) log p(theta)
//         - (feature_kl_weight / T) KL_features
// where L_hat is the batch-mean head bound. The backbone prior appears only in
// full training and the feature KL only in collapsed training.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "vbll/backbone.hpp"
#include "vbll/checkpoint.hpp"
#include "vbll/data.hpp"
#include "vbll/heads.hpp"
#include "vbll/optimizer.hpp"

namespace vbll {

enum class TrainMode { full, post, collapsed };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

struct TrainConfig {
  int epochs = 1;
  Index batch_size = 32;
  OptimizerConfig optimizer{};
  /// Optimizer weight decay, applied to backbone parameters.
  double weight_decay = 0.0;
  /// Learning rate of the backbone; negative means the optimizer rate.
  double backbone_learning_rate = -1.0;
  /// Learning rate of the noise covariance; negative means the optimizer rate.
  double noise_learning_rate = -1.0;
  double kl_weight = 1.0;
  double feature_kl_weight = 1.0;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::full;

  void validate() const;
};

Json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const Json& j);

/// Values of one objective evaluation.
struct ObjectiveTerms {
  double objective = 0.0;
  double expected_loglik = 0.0;
  double regularizer = 0.0;
  double kl = 0.0;
  double noise_log_prior = 0.0;
  double backbone_log_prior = 0.0;
  double feature_kl = 0.0;
};

struct EpochRecord {
  int epoch = 0;
  /// Mean over the epoch's batches of the negative objective.
  double train_loss = 0.0;
  ObjectiveTerms terms;
  double wall_time = 0.0;

  Json to_json() const;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::vector<double> losses() const;
  /// One JSON object per line.
  std::string to_jsonl() const;
};

/// Optimizer state and objective for one (backbone, head) pair. Keeps its state
/// across calls so training can continue on a growing dataset.
class Trainer {
 public:
  Trainer(Backbone& backbone, VariationalHead& head, TrainConfig config);

  /// One gradient step on `batch` for a dataset of size `dataset_size`.
  ObjectiveTerms step(const Dataset& batch, double dataset_size);
  /// Objective at the current parameters without updating anything.
  ObjectiveTerms evaluate(const Dataset& batch, double dataset_size);
  using EpochCallback = std::function<void(const EpochRecord&)>;
  /// Runs `config.epochs` shuffled epochs over `data`.
  TrainHistory fit(const Dataset& data, const EpochCallback& on_epoch = {});

  const TrainConfig& config() const { return config_; }
  Rng& shuffle_rng() { return shuffle_rng_; }

 private:
  ad::Var build(ad::Tape& tape, const Dataset& batch, double dataset_size, ObjectiveTerms& terms,
                bool sample_weights);

  Backbone& backbone_;
  VariationalHead& head_;
  TrainConfig config_;
  Optimizer optimizer_;
  Rng shuffle_rng_;
  Rng weight_noise_rng_;
  long step_count_ = 0;
};

/// Joint training of backbone and head.
TrainHistory train_full(Backbone& backbone, VariationalHead& head, const Dataset& data,
                        TrainConfig config);
/// Head-only training on frozen features. `initial_mean` optionally seeds the
/// head mean with a point-estimate last layer.
TrainHistory train_post(const Backbone& backbone, VariationalHead& head, const Dataset& data,
                        TrainConfig config, const std::optional<Matrix>& initial_mean = {});
/// Training with variational backbone weights, one weight sample per step.
TrainHistory train_collapsed(Backbone& backbone, VariationalHead& head, const Dataset& data,
                             TrainConfig config);

/// Mini-batch index sets of one epoch: a seeded permutation cut into
/// floor(T / B) batches, the remainder dropped. T < B yields one batch of all rows.
std::vector<std::vector<Index>> epoch_batches(Index dataset_size, Index batch_size, Rng& rng);

}  // namespace vbll
