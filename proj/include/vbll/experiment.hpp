#pragma once

// Config-driven experiments. A config is a JSON object with a required "task"
// and optional blocks "data", "backbone", "head", "train", "eval", "bandit",
// "sweep". Missing keys take task defaults; the fully resolved config is saved
// with every run. See README.md for the schema.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vbll/backbone.hpp"
#include "vbll/checkpoint.hpp"
#include "vbll/dataset.hpp"
#include "vbll/heads.hpp"
#include "vbll/hyperparams.hpp"
#include "vbll/metrics.hpp"
#include "vbll/trainer.hpp"
#include "vbll/triangular_factor.hpp"
#include "vbll/wheel_bandit.hpp"

namespace vbll {

enum class Task { regression, disc_class, gen_class, bandit, toy_gap, half_moon };

std::string to_string(Task task);
Task task_from_string(const std::string& name);

struct DataSettings {
  std::string train_path;
  std::string test_path;
  Index target_columns = 1;
  bool normalize = true;
  /// Held-out fraction when no test file is given.
  double test_fraction = 0.1;
  /// When positive, this fraction of the training rows is held out, the
  /// validation NLL is checked every val_every epochs, and the final model is
  /// retrained on all training rows for the best epoch count.
  double val_fraction = 0.0;
  int val_every = 10;
  CubicGapParams cubic{};
  HalfMoonParams moon{};
};

struct HeadSettings {
  /// Reformulated hyperparameters replace the raw ones when present.
  std::optional<ReformulatedHyperparams> reformulated;
  RawHyperparams raw{};
  FactorLayout covariance_layout = FactorLayout::dense;
  FactorLayout noise_layout = FactorLayout::dense;
  bool freeze_noise = false;
  /// Head means start at N(0, mean_init_std^2) draws; 0 keeps them at zero.
  double mean_init_std = 0.0;
  /// Initial log-diagonal of every posterior covariance factor.
  double covariance_init_log_diag = 0.0;
  /// Regression noise precision starts at 1 / Var(y_train) per output instead
  /// of the identity.
  bool noise_init_from_targets = false;

  /// Raw hyperparameters for a training set of size T with N_y outputs.
  RawHyperparams resolve(double dataset_size, Index n_outputs) const;
};

struct EvalSettings {
  std::vector<std::string> ood_paths;
  int samples = 10;
  int ece_bins = kDefaultEceBins;
  double ood_radius = 3.0;
  Index ood_points = 1000;
  bool normalize_by_prior = false;
};

struct BanditSettings {
  WheelConfig wheel{};
  long steps = 8000;
  long update_period = 20;
  int grad_steps_per_update = 100;
};

struct SweepGrid {
  std::vector<double> l_hat;
  std::vector<double> p_hat;
  std::vector<double> alpha_sigma;
  std::vector<double> alpha_s;
};

struct ExperimentConfig {
  Task task = Task::regression;
  std::uint64_t seed = 0;
  std::string output_dir;
  DataSettings data{};
  MLPConfig backbone{};
  HeadSettings head{};
  TrainConfig train{};
  EvalSettings eval{};
  BanditSettings bandit{};
  SweepGrid sweep{};

  Json to_json() const;
  /// Parses a user config on top of the task defaults. Throws
  /// std::invalid_argument on validation failures.
  static ExperimentConfig from_json(const Json& user);
};

/// Resolved default config of a task.
Json default_config(Task task);

/// Applies "dotted.key=value" to a config; the value is parsed as JSON when
/// possible and kept as a string otherwise.
void apply_override(Json& config, const std::string& assignment);

/// Trains and evaluates; writes config.json, metrics.json, head.json,
/// backbone.json and log.jsonl when output_dir is set. Returns the metrics.
Json run_experiment(const ExperimentConfig& config);

/// Re-evaluates the checkpoints of a finished run directory.
Json evaluate_run(const std::filesystem::path& run_dir);

/// Trains one model per grid point (regression or toy-gap task) and writes
/// sweep.csv with per-epoch noise precision, covariance norm and loss.
/// Returns the number of grid points.
std::size_t run_sweep(const ExperimentConfig& config);

}  // namespace vbll
