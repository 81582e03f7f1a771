#pragma once

#include <span>
#include <string>
#include <vector>

#include "vbll/autodiff.hpp"

namespace vbll {

enum class OptimizerKind { sgdm, adamw };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global gradient-norm threshold; non-positive disables clipping.
  double grad_clip_max = 1.0;
};

/// Parameters sharing a learning rate and weight decay. SGDM applies the decay
/// as an L2 term added to the gradient; AdamW decays the weights directly.
struct ParamGroup {
  std::vector<ad::Parameter*> params;
  double learning_rate = 0.0;
  double weight_decay = 0.0;
};

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(std::span<ad::Parameter* const> params, double max_norm);

/// Minimizes: every step moves parameters against their accumulated `grad`.
class Optimizer {
 public:
  Optimizer(OptimizerConfig config, std::vector<ParamGroup> groups);

  /// Clips over every group with a nonzero learning rate, then updates.
  void step();
  void zero_grad();
  double last_grad_norm() const { return last_norm_; }
  long steps() const { return steps_; }
  const OptimizerConfig& config() const { return config_; }

 private:
  struct Slot {
    Matrix first;
    Matrix second;
  };

  OptimizerConfig config_;
  std::vector<ParamGroup> groups_;
  std::vector<std::vector<Slot>> state_;
  long steps_ = 0;
  double last_norm_ = 0.0;
};

}  // namespace vbll
