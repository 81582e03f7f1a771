#include "vbll/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace vbll {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::sgdm ? "sgdm" : "adamw"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgdm") return OptimizerKind::sgdm;
  if (name == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + name + "'");
}

double clip_global_norm(std::span<ad::Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const ad::Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double scale = max_norm / norm;
    for (ad::Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<ParamGroup> groups)
    : config_(config), groups_(std::move(groups)) {
  require(config_.learning_rate >= 0.0, "Optimizer: learning rate must be nonnegative");
  state_.resize(groups_.size());
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    for (ad::Parameter* p : groups_[g].params) {
      state_[g].push_back({Matrix::Zero(p->values.rows(), p->values.cols()),
                           Matrix::Zero(p->values.rows(), p->values.cols())});
    }
  }
}

void Optimizer::zero_grad() {
  for (auto& group : groups_) {
    for (ad::Parameter* p : group.params) p->zero_grad();
  }
}

void Optimizer::step() {
  std::vector<ad::Parameter*> active;
  for (const auto& group : groups_) {
    if (group.learning_rate == 0.0) continue;
    for (ad::Parameter* p : group.params) {
      if (p->requires_grad) active.push_back(p);
    }
  }
  last_norm_ = clip_global_norm(active, config_.grad_clip_max);
  ++steps_;
  const double t = static_cast<double>(steps_);
  for (std::size_t g = 0; g < groups_.size(); ++g) {
    const ParamGroup& group = groups_[g];
    if (group.learning_rate == 0.0) continue;
    const double lr = group.learning_rate;
    for (std::size_t i = 0; i < group.params.size(); ++i) {
      ad::Parameter& p = *group.params[i];
      if (!p.requires_grad) continue;
      Slot& slot = state_[g][i];
      if (config_.kind == OptimizerKind::sgdm) {
        Matrix d = p.grad;
        if (group.weight_decay != 0.0) d += group.weight_decay * p.values;
        if (config_.momentum != 0.0) {
          slot.first = steps_ == 1 ? d : (config_.momentum * slot.first + d).eval();
          d = slot.first;
        }
        p.values -= lr * d;
      } else {
        if (group.weight_decay != 0.0) p.values *= (1.0 - lr * group.weight_decay);
        slot.first = config_.beta1 * slot.first + (1.0 - config_.beta1) * p.grad;
        slot.second =
            config_.beta2 * slot.second + (1.0 - config_.beta2) * p.grad.array().square().matrix();
        const double c1 = 1.0 - std::pow(config_.beta1, t);
        const double c2 = 1.0 - std::pow(config_.beta2, t);
        p.values.array() -= lr * (slot.first.array() / c1) /
                            ((slot.second.array() / c2).sqrt() + config_.epsilon);
      }
    }
  }
}

}  // namespace vbll
