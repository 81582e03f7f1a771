#pragma once

// Wheel bandit: contexts are uniform on the unit disk, there are five actions
// 0-4. Action 1 always pays the intermediate mean. Inside radius delta every
// other action pays the low mean; outside, the quadrant of the context picks
// one of actions 0, 2, 3, 4 to pay the high mean and the rest pay the low mean.

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "vbll/backbone.hpp"
#include "vbll/checkpoint.hpp"
#include "vbll/regression_head.hpp"
#include "vbll/trainer.hpp"

namespace vbll {

inline constexpr int kWheelActions = 5;
inline constexpr int kWheelRegions = 5;
inline constexpr int kIntermediateAction = 1;

/// High-reward action of annulus region 1-4 (x0 > 0, x1 > 0 is region 1;
/// x0 > 0, x1 <= 0 is 2; x0 <= 0, x1 > 0 is 3; the rest is 4).
inline constexpr int high_action(int region) { return region == 1 ? 0 : region; }

struct WheelConfig {
  double delta = 0.5;
  double mean_low = 1.0;
  double mean_intermediate = 1.2;
  double mean_high = 50.0;
  double reward_std = 0.01;

  void validate() const;
};

class WheelEnv {
 public:
  WheelEnv(WheelConfig config, std::uint64_t seed);

  const WheelConfig& config() const { return config_; }
  /// Current context.
  const Vector& context() const { return context_; }
  /// Noisy reward for `action` at the current context, then a fresh context.
  double step(int action);

  /// 0 for the inner disk, 1-4 for the quadrant sectors of the annulus.
  int region(const Vector& x) const;
  double mean_reward(const Vector& x, int action) const;
  int optimal_action(const Vector& x) const;
  /// Expected per-step regret of the uniform-random policy, from region areas.
  double random_agent_regret() const;

  static Vector sample_context(Rng& rng);

 private:
  WheelConfig config_;
  Rng context_rng_;
  Rng reward_rng_;
  Vector context_;
};

class BanditPolicy {
 public:
  virtual ~BanditPolicy() = default;
  virtual int act(const Vector& context) = 0;
  virtual void observe(const Vector& /*context*/, int /*action*/, double /*reward*/) {}
  /// Called every update period.
  virtual void update() {}
};

class RandomPolicy final : public BanditPolicy {
 public:
  explicit RandomPolicy(std::uint64_t seed) : rng_(make_rng(seed, Stream::policy)) {}
  int act(const Vector& context) override;

 private:
  Rng rng_;
};

class OraclePolicy final : public BanditPolicy {
 public:
  explicit OraclePolicy(const WheelEnv& env) : env_(env) {}
  int act(const Vector& context) override { return env_.optimal_action(context); }

 private:
  const WheelEnv& env_;
};

struct ThompsonConfig {
  MLPConfig backbone{{2, 100, 100}};
  HeadPriors priors{};
  TrainConfig train{};
  int grad_steps_per_update = 100;

  static ThompsonConfig defaults();
};

/// argmax_a (W phi(x))_a with W ~ MN(W_bar, I, S); lowest index wins ties.
int thompson_action(const RegressionHead& head, const Backbone& backbone, const Vector& context,
                    Rng& rng);

/// VBLL regression agent with one output per action, trained on its replay
/// buffer. Each row of the buffer observes only the chosen action's reward.
class ThompsonAgent final : public BanditPolicy {
 public:
  ThompsonAgent(ThompsonConfig config, std::uint64_t seed);

  int act(const Vector& context) override;
  void observe(const Vector& context, int action, double reward) override;
  void update() override;

  const RegressionHead& head() const { return head_; }
  const Backbone& backbone() const { return backbone_; }
  Index buffer_size() const { return static_cast<Index>(contexts_.size()); }

 private:
  ThompsonConfig config_;
  Backbone backbone_;
  RegressionHead head_;
  std::unique_ptr<Trainer> trainer_;
  Rng policy_rng_;
  Rng batch_rng_;
  std::vector<Vector> contexts_;
  std::vector<int> actions_;
  std::vector<double> rewards_;
};

struct BanditStep {
  Vector context;
  int region = 0;
  int action = 0;
  double reward = 0.0;
  double oracle_reward = 0.0;  // mean of the optimal action
  double expected_reward = 0.0;  // mean of the chosen action
};

struct BanditLog {
  std::vector<BanditStep> steps;
  /// Per-step cumulative expected regret.
  std::vector<double> cumulative;
  double random_regret_per_step = 0.0;
  std::array<std::array<long, kWheelActions>, kWheelRegions> histogram{};

  double cumulative_regret() const { return cumulative.empty() ? 0.0 : cumulative.back(); }
  /// 100 x agent regret / random-agent regret over the same number of steps.
  double normalized_cumulative_regret() const;
  /// Same normalization over the final `window` steps.
  double normalized_simple_regret(std::size_t window = 500) const;

  Json summary() const;
  std::string to_jsonl() const;
};

/// Runs `total_steps` environment steps, calling policy.update() after every
/// `update_period` steps.
BanditLog run_bandit(WheelEnv& env, BanditPolicy& policy, long total_steps, long update_period);

}  // namespace vbll
