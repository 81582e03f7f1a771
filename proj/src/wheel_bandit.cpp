#include "vbll/wheel_bandit.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace vbll {

void WheelConfig::validate() const {
  require(delta > 0.0 && delta <= 1.0, "WheelConfig: delta must be in (0, 1]");
  require(reward_std >= 0.0, "WheelConfig: reward_std must be nonnegative");
}

WheelEnv::WheelEnv(WheelConfig config, std::uint64_t seed)
    : config_(config),
      context_rng_(make_rng(seed, Stream::environment)),
      reward_rng_(make_rng(seed, Stream::data)) {
  config_.validate();
  context_ = sample_context(context_rng_);
}

Vector WheelEnv::sample_context(Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double r = std::sqrt(u(rng));
  const double theta = 2.0 * std::numbers::pi * u(rng);
  Vector x(2);
  x << r * std::cos(theta), r * std::sin(theta);
  return x;
}

int WheelEnv::region(const Vector& x) const {
  require(x.size() == 2, "WheelEnv: contexts are two-dimensional");
  if (x.norm() <= config_.delta) return 0;
  if (x(0) > 0.0) return x(1) > 0.0 ? 1 : 2;
  return x(1) > 0.0 ? 3 : 4;
}

double WheelEnv::mean_reward(const Vector& x, int action) const {
  require(action >= 0 && action < kWheelActions, "WheelEnv: invalid action");
  if (action == kIntermediateAction) return config_.mean_intermediate;
  const int r = region(x);
  return r != 0 && high_action(r) == action ? config_.mean_high : config_.mean_low;
}

int WheelEnv::optimal_action(const Vector& x) const {
  const int r = region(x);
  if (r == 0) return config_.mean_intermediate >= config_.mean_low ? kIntermediateAction : 0;
  return config_.mean_high >= config_.mean_intermediate ? high_action(r) : kIntermediateAction;
}

double WheelEnv::random_agent_regret() const {
  auto regret_in = [this](int r) {
    Vector x(2);
    // Representative point of each region.
    const double far = std::min(1.0, 0.5 * (1.0 + config_.delta) + 1e-12);
    switch (r) {
      case 0: x << 0.0, 0.0; break;
      case 1: x << far / std::sqrt(2.0), far / std::sqrt(2.0); break;
      case 2: x << far / std::sqrt(2.0), -far / std::sqrt(2.0); break;
      case 3: x << -far / std::sqrt(2.0), far / std::sqrt(2.0); break;
      default: x << -far / std::sqrt(2.0), -far / std::sqrt(2.0); break;
    }
    double mean = 0.0;
    for (int a = 0; a < kWheelActions; ++a) mean += mean_reward(x, a);
    mean /= kWheelActions;
    return mean_reward(x, optimal_action(x)) - mean;
  };
  const double inner = config_.delta * config_.delta;
  double total = inner * regret_in(0);
  for (int r = 1; r < kWheelRegions; ++r) total += 0.25 * (1.0 - inner) * regret_in(r);
  return total;
}

double WheelEnv::step(int action) {
  const double mean = mean_reward(context_, action);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double reward = mean + config_.reward_std * noise(reward_rng_);
  context_ = sample_context(context_rng_);
  return reward;
}

int RandomPolicy::act(const Vector& /*context*/) {
  std::uniform_int_distribution<int> pick(0, kWheelActions - 1);
  return pick(rng_);
}

ThompsonConfig ThompsonConfig::defaults() {
  ThompsonConfig c;
  c.train.optimizer.kind = OptimizerKind::adamw;
  c.train.optimizer.learning_rate = 3e-3;
  c.train.optimizer.grad_clip_max = 1.0;
  c.train.batch_size = 512;
  c.train.mode = TrainMode::full;
  return c;
}

int thompson_action(const RegressionHead& head, const Backbone& backbone, const Vector& context,
                    Rng& rng) {
  const Vector phi = backbone.features(context.transpose()).row(0).transpose();
  const Vector values = head.sample_weights(rng) * phi;
  Index best = 0;
  for (Index a = 1; a < values.size(); ++a) {
    if (values(a) > values(best)) best = a;
  }
  return static_cast<int>(best);
}

ThompsonAgent::ThompsonAgent(ThompsonConfig config, std::uint64_t seed)
    : config_(std::move(config)),
      head_(config_.backbone.feature_dim(), kWheelActions, config_.priors, FactorLayout::dense,
            FactorLayout::diagonal),
      policy_rng_(make_rng(seed, Stream::policy)),
      batch_rng_(make_rng(seed, Stream::shuffle)) {
  require(config_.backbone.input_dim() == 2, "ThompsonAgent: backbone input width must be 2");
  Rng init = make_rng(seed, Stream::init);
  backbone_ = Backbone(config_.backbone, init);
  config_.train.seed = seed;
  trainer_ = std::make_unique<Trainer>(backbone_, head_, config_.train);
}

int ThompsonAgent::act(const Vector& context) {
  return thompson_action(head_, backbone_, context, policy_rng_);
}

void ThompsonAgent::observe(const Vector& context, int action, double reward) {
  contexts_.push_back(context);
  actions_.push_back(action);
  rewards_.push_back(reward);
}

void ThompsonAgent::update() {
  const Index n = buffer_size();
  if (n == 0) return;
  const Index b = std::min<Index>(config_.train.batch_size, n);
  std::vector<Index> rows(b);
  for (int s = 0; s < config_.grad_steps_per_update; ++s) {
    // Batches of distinct rows: a partial Fisher-Yates pass when b < n.
    if (b == n) {
      std::iota(rows.begin(), rows.end(), Index{0});
    } else {
      std::vector<Index> perm(n);
      std::iota(perm.begin(), perm.end(), Index{0});
      for (Index i = 0; i < b; ++i) {
        std::uniform_int_distribution<Index> j(i, n - 1);
        std::swap(perm[i], perm[j(batch_rng_)]);
      }
      std::copy(perm.begin(), perm.begin() + b, rows.begin());
    }
    Dataset batch;
    batch.X.resize(b, 2);
    batch.Y = Matrix::Zero(b, kWheelActions);
    batch.observed = Matrix::Zero(b, kWheelActions);
    for (Index i = 0; i < b; ++i) {
      const Index r = rows[i];
      batch.X.row(i) = contexts_[r].transpose();
      batch.Y(i, actions_[r]) = rewards_[r];
      batch.observed(i, actions_[r]) = 1.0;
    }
    trainer_->step(batch, static_cast<double>(n));
  }
}

double BanditLog::normalized_cumulative_regret() const {
  if (steps.empty() || random_regret_per_step <= 0.0) return 0.0;
  return 100.0 * cumulative_regret() / (random_regret_per_step * static_cast<double>(steps.size()));
}

double BanditLog::normalized_simple_regret(std::size_t window) const {
  if (steps.empty() || random_regret_per_step <= 0.0) return 0.0;
  const std::size_t w = std::min(window, steps.size());
  double total = 0.0;
  for (std::size_t i = steps.size() - w; i < steps.size(); ++i) {
    total += steps[i].oracle_reward - steps[i].expected_reward;
  }
  return 100.0 * total / (random_regret_per_step * static_cast<double>(w));
}

Json BanditLog::summary() const {
  Json j;
  j["steps"] = steps.size();
  j["cumulative_regret"] = cumulative_regret();
  j["random_regret_per_step"] = random_regret_per_step;
  j["normalized_cumulative_regret"] = normalized_cumulative_regret();
  j["normalized_simple_regret"] = normalized_simple_regret();
  Json hist = Json::array();
  for (const auto& row : histogram) hist.push_back(row);
  j["region_action_histogram"] = hist;
  return j;
}

std::string BanditLog::to_jsonl() const {
  std::ostringstream out;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const BanditStep& s = steps[i];
    Json j;
    j["step"] = i;
    j["context"] = {s.context(0), s.context(1)};
    j["region"] = s.region;
    j["action"] = s.action;
    j["reward"] = s.reward;
    j["oracle_reward"] = s.oracle_reward;
    j["cumulative_regret"] = cumulative[i];
    out << j.dump() << '\n';
  }
  return out.str();
}

BanditLog run_bandit(WheelEnv& env, BanditPolicy& policy, long total_steps, long update_period) {
  require(update_period >= 1 && total_steps >= update_period,
          "run_bandit: need total_steps >= update_period >= 1");
  BanditLog log;
  log.random_regret_per_step = env.random_agent_regret();
  log.steps.reserve(total_steps);
  log.cumulative.reserve(total_steps);
  double cumulative = 0.0;
  for (long t = 0; t < total_steps; ++t) {
    BanditStep s;
    s.context = env.context();
    s.region = env.region(s.context);
    s.action = policy.act(s.context);
    s.oracle_reward = env.mean_reward(s.context, env.optimal_action(s.context));
    s.expected_reward = env.mean_reward(s.context, s.action);
    s.reward = env.step(s.action);
    policy.observe(s.context, s.action, s.reward);
    cumulative += s.oracle_reward - s.expected_reward;
    log.cumulative.push_back(cumulative);
    ++log.histogram[s.region][s.action];
    log.steps.push_back(std::move(s));
    if ((t + 1) % update_period == 0) policy.update();
  }
  return log;
}

}  // namespace vbll
