#include "vbll/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace vbll {

std::string to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::full: return "full";
    case TrainMode::post: return "post";
    case TrainMode::collapsed: return "collapsed";
  }
  return "unknown";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "full") return TrainMode::full;
  if (name == "post") return TrainMode::post;
  if (name == "collapsed") return TrainMode::collapsed;
  throw std::invalid_argument("unknown training mode '" + name + "'");
}

void TrainConfig::validate() const {
  require(epochs >= 0, "TrainConfig: epochs must be nonnegative");
  require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
  require(optimizer.learning_rate >= 0.0, "TrainConfig: learning rate must be nonnegative");
  require(optimizer.grad_clip_max > 0.0, "TrainConfig: grad_clip_max must be positive");
  require(kl_weight >= 0.0 && feature_kl_weight >= 0.0, "TrainConfig: KL weights must be nonnegative");
  require(weight_decay >= 0.0, "TrainConfig: weight_decay must be nonnegative");
}

Json to_json(const TrainConfig& c) {
  Json j;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["optimizer"] = to_string(c.optimizer.kind);
  j["learning_rate"] = c.optimizer.learning_rate;
  j["momentum"] = c.optimizer.momentum;
  j["beta1"] = c.optimizer.beta1;
  j["beta2"] = c.optimizer.beta2;
  j["epsilon"] = c.optimizer.epsilon;
  j["grad_clip_max"] = c.optimizer.grad_clip_max;
  j["weight_decay"] = c.weight_decay;
  j["backbone_learning_rate"] = c.backbone_learning_rate;
  j["noise_learning_rate"] = c.noise_learning_rate;
  j["kl_weight"] = c.kl_weight;
  j["feature_kl_weight"] = c.feature_kl_weight;
  j["seed"] = c.seed;
  j["mode"] = to_string(c.mode);
  return j;
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.optimizer.kind = optimizer_kind_from_string(j.value("optimizer", std::string("adamw")));
  c.optimizer.learning_rate = j.value("learning_rate", c.optimizer.learning_rate);
  c.optimizer.momentum = j.value("momentum", c.optimizer.momentum);
  c.optimizer.beta1 = j.value("beta1", c.optimizer.beta1);
  c.optimizer.beta2 = j.value("beta2", c.optimizer.beta2);
  c.optimizer.epsilon = j.value("epsilon", c.optimizer.epsilon);
  c.optimizer.grad_clip_max = j.value("grad_clip_max", c.optimizer.grad_clip_max);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.backbone_learning_rate = j.value("backbone_learning_rate", c.backbone_learning_rate);
  c.noise_learning_rate = j.value("noise_learning_rate", c.noise_learning_rate);
  c.kl_weight = j.value("kl_weight", c.kl_weight);
  c.feature_kl_weight = j.value("feature_kl_weight", c.feature_kl_weight);
  c.seed = j.value("seed", c.seed);
  c.mode = train_mode_from_string(j.value("mode", std::string("full")));
  c.validate();
  return c;
}

Json EpochRecord::to_json() const {
  Json j;
  j["epoch"] = epoch;
  j["train_loss"] = train_loss;
  j["expected_loglik"] = terms.expected_loglik;
  j["regularizer"] = terms.regularizer;
  j["kl"] = terms.kl;
  j["noise_log_prior"] = terms.noise_log_prior;
  j["backbone_log_prior"] = terms.backbone_log_prior;
  j["feature_kl"] = terms.feature_kl;
  j["wall_time"] = wall_time;
  return j;
}

std::vector<double> TrainHistory::losses() const {
  std::vector<double> out;
  out.reserve(epochs.size());
  for (const auto& e : epochs) out.push_back(e.train_loss);
  return out;
}

std::string TrainHistory::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) out << e.to_json().dump() << '\n';
  return out.str();
}

std::vector<std::vector<Index>> epoch_batches(Index dataset_size, Index batch_size, Rng& rng) {
  require(dataset_size >= 1, "epoch_batches: empty dataset");
  std::vector<Index> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  const Index b = std::min(batch_size, dataset_size);
  const Index n = dataset_size / b;
  std::vector<std::vector<Index>> out(n);
  for (Index i = 0; i < n; ++i) out[i].assign(perm.begin() + i * b, perm.begin() + (i + 1) * b);
  return out;
}

namespace {

std::vector<ParamGroup> make_groups(Backbone& backbone, VariationalHead& head,
                                    const TrainConfig& c) {
  const double lr = c.optimizer.learning_rate;
  std::vector<ParamGroup> groups;
  if (c.mode != TrainMode::post) {
    ParamGroup g;
    g.params = backbone.parameters();
    g.learning_rate = c.backbone_learning_rate < 0.0 ? lr : c.backbone_learning_rate;
    g.weight_decay = c.weight_decay;
    groups.push_back(std::move(g));
  }
  const std::vector<ad::Parameter*> noise = head.noise_parameters();
  ParamGroup main;
  main.learning_rate = lr;
  for (ad::Parameter* p : head.parameters()) {
    if (std::find(noise.begin(), noise.end(), p) == noise.end()) main.params.push_back(p);
  }
  groups.push_back(std::move(main));
  ParamGroup ng;
  ng.params = noise;
  ng.learning_rate = c.noise_learning_rate < 0.0 ? lr : c.noise_learning_rate;
  groups.push_back(std::move(ng));
  return groups;
}

void check_finite(const ObjectiveTerms& t, long step) {
  const std::pair<const char*, double> parts[] = {
      {"expected log-likelihood", t.expected_loglik},
      {"head KL", t.kl},
      {"noise log-prior", t.noise_log_prior},
      {"backbone log-prior", t.backbone_log_prior},
      {"feature KL", t.feature_kl},
  };
  for (const auto& [name, value] : parts) {
    if (!std::isfinite(value)) {
      throw NonFiniteError("non-finite " + std::string(name) + " at step " + std::to_string(step));
    }
  }
  if (!std::isfinite(t.objective)) {
    throw NonFiniteError("non-finite objective at step " + std::to_string(step));
  }
}

}  // namespace

Trainer::Trainer(Backbone& backbone, VariationalHead& head, TrainConfig config)
    : backbone_(backbone),
      head_(head),
      config_(config),
      optimizer_(config.optimizer, make_groups(backbone, head, config)),
      shuffle_rng_(make_rng(config.seed, Stream::shuffle)),
      weight_noise_rng_(make_rng(config.seed, Stream::weight_noise)) {
  config_.validate();
  if (config_.mode == TrainMode::collapsed) {
    require(backbone_.variational(), "collapsed training needs variational backbone weights");
  }
}

ad::Var Trainer::build(ad::Tape& tape, const Dataset& batch, double dataset_size,
                       ObjectiveTerms& terms, bool sample_weights) {
  const double inv_t = 1.0 / dataset_size;
  ad::Var features;
  if (config_.mode == TrainMode::post) {
    features = tape.constant(backbone_.features(batch.X));
  } else {
    Rng* noise = (config_.mode == TrainMode::collapsed && sample_weights) ? &weight_noise_rng_
                                                                           : nullptr;
    features = backbone_.forward(tape, batch.X, noise);
  }
  ad::Var loglik = head_.loss(tape, features, batch);
  RegularizerTerms reg = head_.regularizer(tape, dataset_size, config_.kl_weight);
  ad::Var objective = loglik + reg.total;
  terms.expected_loglik = loglik.scalar();
  terms.regularizer = reg.total.scalar();
  terms.kl = reg.kl.scalar();
  terms.noise_log_prior = reg.noise_log_prior.scalar();
  if (config_.mode == TrainMode::full) {
    ad::Var lp = backbone_.log_prior(tape);
    terms.backbone_log_prior = lp.scalar();
    objective = objective + inv_t * lp;
  } else if (config_.mode == TrainMode::collapsed) {
    ad::Var fkl = backbone_.weight_kl(tape);
    terms.feature_kl = fkl.scalar();
    objective = objective - (config_.feature_kl_weight * inv_t) * fkl;
  }
  terms.objective = objective.scalar();
  return objective;
}

ObjectiveTerms Trainer::step(const Dataset& batch, double dataset_size) {
  require(dataset_size >= 1.0, "Trainer::step: dataset size must be >= 1");
  ObjectiveTerms terms;
  ad::Tape tape;
  ad::Var objective = build(tape, batch, dataset_size, terms, true);
  check_finite(terms, step_count_);
  optimizer_.zero_grad();
  tape.backward(-1.0 * objective);
  optimizer_.step();
  ++step_count_;
  return terms;
}

ObjectiveTerms Trainer::evaluate(const Dataset& batch, double dataset_size) {
  ObjectiveTerms terms;
  ad::Tape tape;
  build(tape, batch, dataset_size, terms, false);
  return terms;
}

TrainHistory Trainer::fit(const Dataset& data, const EpochCallback& on_epoch) {
  require(data.size() >= 1, "Trainer::fit: empty dataset");
  head_.prepare(data);
  TrainHistory history;
  const double t = static_cast<double>(data.size());
  for (int epoch = 0; epoch < config_.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches = epoch_batches(data.size(), config_.batch_size, shuffle_rng_);
    EpochRecord record;
    record.epoch = epoch;
    for (const auto& rows : batches) {
      const ObjectiveTerms terms = step(data.subset(rows), t);
      record.train_loss -= terms.objective;
      record.terms.objective += terms.objective;
      record.terms.expected_loglik += terms.expected_loglik;
      record.terms.regularizer += terms.regularizer;
      record.terms.kl += terms.kl;
      record.terms.noise_log_prior += terms.noise_log_prior;
      record.terms.backbone_log_prior += terms.backbone_log_prior;
      record.terms.feature_kl += terms.feature_kl;
    }
    const double n = static_cast<double>(batches.size());
    record.train_loss /= n;
    record.terms.objective /= n;
    record.terms.expected_loglik /= n;
    record.terms.regularizer /= n;
    record.terms.kl /= n;
    record.terms.noise_log_prior /= n;
    record.terms.backbone_log_prior /= n;
    record.terms.feature_kl /= n;
    record.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);
  }
  return history;
}

TrainHistory train_full(Backbone& backbone, VariationalHead& head, const Dataset& data,
                        TrainConfig config) {
  config.mode = TrainMode::full;
  Trainer trainer(backbone, head, config);
  return trainer.fit(data);
}

TrainHistory train_post(const Backbone& backbone, VariationalHead& head, const Dataset& data,
                        TrainConfig config, const std::optional<Matrix>& initial_mean) {
  config.mode = TrainMode::post;
  if (initial_mean) head.initialize_mean(*initial_mean);
  // The trainer never touches backbone parameters in post mode.
  Backbone frozen = backbone;
  Trainer trainer(frozen, head, config);
  return trainer.fit(data);
}

TrainHistory train_collapsed(Backbone& backbone, VariationalHead& head, const Dataset& data,
                             TrainConfig config) {
  config.mode = TrainMode::collapsed;
  Trainer trainer(backbone, head, config);
  return trainer.fit(data);
}

}  // namespace vbll
