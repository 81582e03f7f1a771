#include "vbll/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numbers>
#include <set>
#include <stdexcept>

#include "head_common.hpp"
#include "vbll/discriminative_head.hpp"
#include "vbll/generative_head.hpp"
#include "vbll/metrics.hpp"
#include "vbll/ood.hpp"
#include "vbll/regression_head.hpp"

namespace vbll {

namespace fs = std::filesystem;

std::string to_string(Task task) {
  switch (task) {
    case Task::regression: return "regression";
    case Task::disc_class: return "disc-class";
    case Task::gen_class: return "gen-class";
    case Task::bandit: return "bandit";
    case Task::toy_gap: return "toy-gap";
    case Task::half_moon: return "half-moon";
  }
  return "unknown";
}

Task task_from_string(const std::string& name) {
  for (Task t : {Task::regression, Task::disc_class, Task::gen_class, Task::bandit, Task::toy_gap,
                 Task::half_moon}) {
    if (to_string(t) == name) return t;
  }
  throw std::invalid_argument("unknown task '" + name + "'");
}

RawHyperparams HeadSettings::resolve(double dataset_size, Index n_outputs) const {
  if (reformulated) return map_hyperparams(*reformulated, dataset_size, n_outputs);
  return raw;
}

namespace {

const std::set<std::string> kRawHeadKeys{"prior_scale", "wishart_scale", "nu_tilde", "kl_weight"};

ExperimentConfig task_defaults(Task task) {
  ExperimentConfig c;
  c.task = task;
  OptimizerConfig& opt = c.train.optimizer;
  switch (task) {
    case Task::regression:
      c.backbone.widths = {0, 50, 50};
      opt.kind = OptimizerKind::adamw;
      opt.learning_rate = 1e-3;
      opt.grad_clip_max = 1.0;
      c.train.weight_decay = 0.01;
      c.train.epochs = 1000;
      c.train.batch_size = 32;
      c.data.val_fraction = 0.2;
      c.head.noise_init_from_targets = true;
      break;
    case Task::disc_class:
    case Task::gen_class:
      c.backbone.widths = {0, 128, 128};
      opt.kind = OptimizerKind::adamw;
      opt.learning_rate = 1e-3;
      opt.grad_clip_max = 2.0;
      c.train.weight_decay = 0.01;
      c.train.epochs = 100;
      c.train.batch_size = 32;
      break;
    case Task::toy_gap:
      c.backbone.widths = {1, 128, 128};
      c.backbone.mode = WeightMode::variational;
      opt.kind = OptimizerKind::sgdm;
      opt.learning_rate = 3e-4;
      opt.momentum = 0.9;
      opt.grad_clip_max = 2.0;
      c.train.mode = TrainMode::collapsed;
      c.train.epochs = 1000;
      c.train.batch_size = 32;
      c.train.feature_kl_weight = 1.0;
      break;
    case Task::half_moon:
      c.backbone.widths = {2, 128, 128};
      c.backbone.residual = true;
      c.head.raw.nu_tilde = 128.0;
      opt.kind = OptimizerKind::sgdm;
      opt.learning_rate = 3e-2;
      opt.momentum = 0.9;
      opt.grad_clip_max = 2.0;
      c.train.weight_decay = 1e-4;
      c.train.epochs = 100;
      c.train.batch_size = 32;
      break;
    case Task::bandit:
      c.backbone.widths = {2, 100, 100};
      c.head.noise_layout = FactorLayout::diagonal;
      opt.kind = OptimizerKind::adamw;
      opt.learning_rate = 3e-3;
      opt.grad_clip_max = 1.0;
      c.train.batch_size = 512;
      c.train.epochs = 0;
      break;
  }
  return c;
}

Json head_to_json(const HeadSettings& h) {
  Json j;
  if (h.reformulated) {
    j["reformulated"] = {{"l_hat", h.reformulated->l_hat},
                         {"p_hat", h.reformulated->p_hat},
                         {"alpha_sigma", h.reformulated->alpha_sigma},
                         {"alpha_s", h.reformulated->alpha_s}};
  } else {
    j["prior_scale"] = h.raw.prior_scale;
    j["wishart_scale"] = h.raw.wishart_scale;
    j["nu_tilde"] = h.raw.nu_tilde;
    j["kl_weight"] = h.raw.kl_weight;
  }
  j["covariance_layout"] = detail::to_string(h.covariance_layout);
  j["noise_layout"] = detail::to_string(h.noise_layout);
  j["freeze_noise"] = h.freeze_noise;
  j["mean_init_std"] = h.mean_init_std;
  j["covariance_init_log_diag"] = h.covariance_init_log_diag;
  j["noise_init_from_targets"] = h.noise_init_from_targets;
  return j;
}

HeadSettings head_settings_from_json(const Json& j) {
  HeadSettings h;
  if (j.contains("reformulated")) {
    const Json& r = j.at("reformulated");
    ReformulatedHyperparams rh;
    rh.l_hat = r.value("l_hat", rh.l_hat);
    rh.p_hat = r.value("p_hat", rh.p_hat);
    rh.alpha_sigma = r.value("alpha_sigma", rh.alpha_sigma);
    rh.alpha_s = r.value("alpha_s", rh.alpha_s);
    require(rh.l_hat > 0.0 && rh.p_hat > 0.0 && rh.alpha_sigma > 0.0 && rh.alpha_s > 0.0,
            "head.reformulated: all values must be positive");
    h.reformulated = rh;
  } else {
    h.raw.prior_scale = j.value("prior_scale", h.raw.prior_scale);
    h.raw.wishart_scale = j.value("wishart_scale", h.raw.wishart_scale);
    h.raw.nu_tilde = j.value("nu_tilde", h.raw.nu_tilde);
    h.raw.kl_weight = j.value("kl_weight", h.raw.kl_weight);
    require(h.raw.prior_scale > 0.0 && h.raw.wishart_scale > 0.0 && h.raw.nu_tilde > 0.0 &&
                h.raw.kl_weight >= 0.0,
            "head: prior_scale, wishart_scale, nu_tilde must be positive and kl_weight >= 0");
  }
  h.covariance_layout = detail::layout_from_string(j.value("covariance_layout", std::string("dense")));
  h.noise_layout = detail::layout_from_string(j.value("noise_layout", std::string("dense")));
  h.freeze_noise = j.value("freeze_noise", false);
  h.mean_init_std = j.value("mean_init_std", 0.0);
  require(h.mean_init_std >= 0.0, "head.mean_init_std must be >= 0");
  h.covariance_init_log_diag = j.value("covariance_init_log_diag", 0.0);
  h.noise_init_from_targets = j.value("noise_init_from_targets", false);
  return h;
}

Json data_to_json(const DataSettings& d) {
  return Json{{"train", d.train_path},
              {"test", d.test_path},
              {"targets", d.target_columns},
              {"normalize", d.normalize},
              {"test_fraction", d.test_fraction},
              {"val_fraction", d.val_fraction},
              {"val_every", d.val_every},
              {"cubic", {{"n", d.cubic.n}, {"coefficient", d.cubic.coefficient},
                         {"noise_std", d.cubic.noise_std}}},
              {"moon", {{"n", d.moon.n}, {"noise_std", d.moon.noise_std}}}};
}

DataSettings data_from_json(const Json& j) {
  DataSettings d;
  d.train_path = j.value("train", d.train_path);
  d.test_path = j.value("test", d.test_path);
  d.target_columns = j.value("targets", d.target_columns);
  d.normalize = j.value("normalize", d.normalize);
  d.test_fraction = j.value("test_fraction", d.test_fraction);
  d.val_fraction = j.value("val_fraction", d.val_fraction);
  d.val_every = j.value("val_every", d.val_every);
  require(d.val_fraction >= 0.0 && d.val_fraction < 1.0, "data.val_fraction must be in [0, 1)");
  require(d.val_every >= 1, "data.val_every must be >= 1");
  if (j.contains("cubic")) {
    const Json& c = j.at("cubic");
    d.cubic.n = c.value("n", d.cubic.n);
    d.cubic.coefficient = c.value("coefficient", d.cubic.coefficient);
    d.cubic.noise_std = c.value("noise_std", d.cubic.noise_std);
  }
  if (j.contains("moon")) {
    const Json& m = j.at("moon");
    d.moon.n = m.value("n", d.moon.n);
    d.moon.noise_std = m.value("noise_std", d.moon.noise_std);
  }
  return d;
}

Json eval_to_json(const EvalSettings& e) {
  return Json{{"ood", e.ood_paths},          {"samples", e.samples},
              {"ece_bins", e.ece_bins},      {"ood_radius", e.ood_radius},
              {"ood_points", e.ood_points},  {"normalize_by_prior", e.normalize_by_prior}};
}

EvalSettings eval_from_json(const Json& j) {
  EvalSettings e;
  e.ood_paths = j.value("ood", e.ood_paths);
  e.samples = j.value("samples", e.samples);
  e.ece_bins = j.value("ece_bins", e.ece_bins);
  e.ood_radius = j.value("ood_radius", e.ood_radius);
  e.ood_points = j.value("ood_points", e.ood_points);
  e.normalize_by_prior = j.value("normalize_by_prior", e.normalize_by_prior);
  require(e.samples >= 1 && e.ece_bins >= 1 && e.ood_points >= 1,
          "eval: samples, ece_bins and ood_points must be >= 1");
  return e;
}

Json bandit_to_json(const BanditSettings& b) {
  return Json{{"delta", b.wheel.delta},
              {"mean_low", b.wheel.mean_low},
              {"mean_intermediate", b.wheel.mean_intermediate},
              {"mean_high", b.wheel.mean_high},
              {"reward_std", b.wheel.reward_std},
              {"steps", b.steps},
              {"update_period", b.update_period},
              {"grad_steps_per_update", b.grad_steps_per_update}};
}

BanditSettings bandit_from_json(const Json& j) {
  BanditSettings b;
  b.wheel.delta = j.value("delta", b.wheel.delta);
  b.wheel.mean_low = j.value("mean_low", b.wheel.mean_low);
  b.wheel.mean_intermediate = j.value("mean_intermediate", b.wheel.mean_intermediate);
  b.wheel.mean_high = j.value("mean_high", b.wheel.mean_high);
  b.wheel.reward_std = j.value("reward_std", b.wheel.reward_std);
  b.steps = j.value("steps", b.steps);
  b.update_period = j.value("update_period", b.update_period);
  b.grad_steps_per_update = j.value("grad_steps_per_update", b.grad_steps_per_update);
  b.wheel.validate();
  require(b.update_period >= 1 && b.steps >= b.update_period && b.grad_steps_per_update >= 0,
          "bandit: need steps >= update_period >= 1 and grad_steps_per_update >= 0");
  return b;
}

Json sweep_to_json(const SweepGrid& s) {
  return Json{{"l_hat", s.l_hat}, {"p_hat", s.p_hat}, {"alpha_sigma", s.alpha_sigma},
              {"alpha_s", s.alpha_s}};
}

SweepGrid sweep_from_json(const Json& j) {
  SweepGrid s;
  s.l_hat = j.value("l_hat", s.l_hat);
  s.p_hat = j.value("p_hat", s.p_hat);
  s.alpha_sigma = j.value("alpha_sigma", s.alpha_sigma);
  s.alpha_s = j.value("alpha_s", s.alpha_s);
  return s;
}

}  // namespace

Json ExperimentConfig::to_json() const {
  Json j;
  j["task"] = vbll::to_string(task);
  j["seed"] = seed;
  j["output_dir"] = output_dir;
  j["data"] = data_to_json(data);
  j["backbone"] = vbll::to_json(backbone);
  j["head"] = head_to_json(head);
  Json t = vbll::to_json(train);
  t.erase("kl_weight");
  t.erase("seed");
  j["train"] = t;
  j["eval"] = eval_to_json(eval);
  j["bandit"] = bandit_to_json(bandit);
  j["sweep"] = sweep_to_json(sweep);
  return j;
}

Json default_config(Task task) { return task_defaults(task).to_json(); }

ExperimentConfig ExperimentConfig::from_json(const Json& user) {
  require(user.is_object(), "config must be a JSON object");
  require(user.contains("task"), "config: missing \"task\"");
  static const std::set<std::string> allowed{"task", "seed", "output_dir", "data", "backbone",
                                             "head", "train", "eval", "bandit", "sweep"};
  for (const auto& [key, value] : user.items()) {
    require(allowed.count(key) == 1, "config: unknown key \"" + key + "\"");
  }
  const Task task = task_from_string(user.at("task").get<std::string>());
  Json merged = default_config(task);
  if (user.contains("head")) {
    const Json& h = user.at("head");
    require(h.is_object(), "config: \"head\" must be an object");
    bool any_raw = false;
    for (const auto& k : kRawHeadKeys) any_raw = any_raw || h.contains(k);
    if (h.contains("reformulated")) {
      require(!any_raw,
              "config: give either raw head hyperparameters or \"reformulated\" ones, not both");
      for (const auto& k : kRawHeadKeys) merged["head"].erase(k);
    } else if (any_raw) {
      merged["head"].erase("reformulated");
    }
  }
  if (user.contains("train")) {
    require(!user.at("train").contains("kl_weight"),
            "config: kl_weight is a head hyperparameter (head.kl_weight)");
  }
  merged.merge_patch(user);

  ExperimentConfig c;
  c.task = task;
  c.seed = merged.value("seed", std::uint64_t{0});
  c.output_dir = merged.value("output_dir", std::string());
  c.data = data_from_json(merged.at("data"));
  c.backbone = mlp_config_from_json(merged.at("backbone"));
  c.head = head_settings_from_json(merged.at("head"));
  c.train = train_config_from_json(merged.at("train"));
  c.train.seed = c.seed;
  c.eval = eval_from_json(merged.at("eval"));
  c.bandit = bandit_from_json(merged.at("bandit"));
  c.sweep = sweep_from_json(merged.at("sweep"));
  if ((task == Task::regression || task == Task::disc_class || task == Task::gen_class)) {
    require(!c.data.train_path.empty(), "config: data.train is required for task " +
                                            vbll::to_string(task));
  }
  return c;
}

void apply_override(Json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, "override must look like key=value: " + assignment);
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    require(!part.empty(), "override: empty key segment in " + key);
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    if (!node->contains(part) || !(*node)[part].is_object()) (*node)[part] = Json::object();
    node = &(*node)[part];
    start = dot + 1;
  }
}

namespace {

struct PreparedData {
  Dataset train;
  Dataset test;
  NormalizationStats stats;
  std::vector<std::pair<std::string, Matrix>> ood;
  Index outputs = 1;
};

Index label_classes(const Dataset& a, const Dataset& b) {
  int top = 0;
  for (int y : a.labels) top = std::max(top, y);
  for (int y : b.labels) top = std::max(top, y);
  return std::max<Index>(2, top + 1);
}

PreparedData prepare_data(const ExperimentConfig& c) {
  PreparedData p;
  switch (c.task) {
    case Task::regression:
    case Task::disc_class:
    case Task::gen_class: {
      CsvOptions opts;
      opts.target_columns = c.task == Task::regression ? c.data.target_columns : 1;
      opts.target_kind = c.task == Task::regression ? TargetKind::regression : TargetKind::label;
      Dataset full = load_dataset_csv(c.data.train_path, opts).data;
      if (!c.data.test_path.empty()) {
        p.train = std::move(full);
        p.test = load_dataset_csv(c.data.test_path, opts).data;
      } else {
        std::tie(p.train, p.test) = train_test_split(full, c.data.test_fraction, c.seed);
      }
      require(p.test.X.cols() == p.train.X.cols(), "test data has a different input width");
      if (c.data.normalize) {
        p.stats = NormalizationStats::fit(p.train);
        p.train = p.stats.apply(p.train);
        p.test = p.stats.apply(p.test);
      }
      for (const std::string& path : c.eval.ood_paths) {
        CsvOptions inputs;
        inputs.target_columns = 0;
        Dataset ood = load_dataset_csv(path, inputs).data;
        require(ood.X.cols() == p.train.X.cols(), "OOD data " + path + " has a different width");
        if (c.data.normalize) {
          ood.X = ((ood.X.rowwise() - p.stats.x_mean.transpose()).array().rowwise() /
                   p.stats.x_std.transpose().array())
                      .matrix();
        }
        p.ood.emplace_back(fs::path(path).stem().string(), ood.X);
      }
      p.outputs = c.task == Task::regression ? p.train.Y.cols() : label_classes(p.train, p.test);
      break;
    }
    case Task::toy_gap:
      p.train = make_cubic_gap(c.data.cubic, c.seed);
      p.test = p.train;
      p.outputs = 1;
      break;
    case Task::half_moon: {
      p.train = make_half_moon(c.data.moon, c.seed);
      p.test = make_half_moon(c.data.moon, c.seed + 1);
      p.outputs = 2;
      // Far points: uniform angle, radius in [r, r + 2] around the training centroid.
      Rng rng = make_rng(c.seed, Stream::evaluation);
      std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
      std::uniform_real_distribution<double> radius(c.eval.ood_radius, c.eval.ood_radius + 2.0);
      const Vector centroid = p.train.X.colwise().mean().transpose();
      Matrix far(c.eval.ood_points, 2);
      for (Index i = 0; i < far.rows(); ++i) {
        const double a = angle(rng);
        const double r = radius(rng);
        far(i, 0) = centroid(0) + r * std::cos(a);
        far(i, 1) = centroid(1) + r * std::sin(a);
      }
      p.ood.emplace_back("far", far);
      break;
    }
    case Task::bandit:
      break;
  }
  return p;
}

std::unique_ptr<VariationalHead> build_head(const ExperimentConfig& c, Index features,
                                            Index outputs, double dataset_size,
                                            RawHyperparams& raw) {
  raw = c.head.resolve(dataset_size, outputs);
  const HeadPriors priors = raw.priors();
  switch (c.task) {
    case Task::regression:
    case Task::toy_gap:
    case Task::bandit:
      return std::make_unique<RegressionHead>(features, outputs, priors, c.head.covariance_layout,
                                              c.head.noise_layout);
    case Task::disc_class:
      return std::make_unique<DiscriminativeHead>(features, outputs, priors,
                                                  c.head.covariance_layout, c.head.freeze_noise);
    case Task::gen_class:
    case Task::half_moon:
      return std::make_unique<GenerativeHead>(features, outputs, priors);
  }
  throw std::invalid_argument("make_head: unknown task");
}

std::unique_ptr<VariationalHead> make_head(const ExperimentConfig& c, Index features,
                                           Index outputs, const Dataset& train,
                                           RawHyperparams& raw) {
  auto head = build_head(c, features, outputs, static_cast<double>(train.size()), raw);
  if (c.head.noise_init_from_targets) {
    auto* reg = dynamic_cast<RegressionHead*>(head.get());
    require(reg != nullptr, "head.noise_init_from_targets needs a regression head");
    const Vector mu = train.Y.colwise().mean().transpose();
    const Vector var =
        (train.Y.rowwise() - mu.transpose()).array().square().colwise().mean().transpose();
    require(var.minCoeff() > 0.0, "head.noise_init_from_targets: a target has zero variance");
    const Vector ld = -0.5 * var.array().log();
    reg->set_noise_precision(c.head.noise_layout == FactorLayout::diagonal
                                 ? TriangularFactor(ld)
                                 : TriangularFactor(Matrix::Zero(outputs, outputs), ld));
  }
  if (c.head.mean_init_std > 0.0) {
    Rng rng = make_rng(c.seed, Stream::head_init);
    std::normal_distribution<double> normal(0.0, c.head.mean_init_std);
    Matrix mean(outputs, features);
    for (Index i = 0; i < mean.size(); ++i) mean.data()[i] = normal(rng);
    head->initialize_mean(mean);
  }
  if (c.head.covariance_init_log_diag != 0.0) {
    const double v = c.head.covariance_init_log_diag;
    const auto factor = [&](FactorLayout layout) {
      const Vector ld = Vector::Constant(features, v);
      return layout == FactorLayout::diagonal ? TriangularFactor(ld)
                                              : TriangularFactor(Matrix::Zero(features, features), ld);
    };
    if (auto* reg = dynamic_cast<RegressionHead*>(head.get())) {
      reg->set_covariance(factor(c.head.covariance_layout));
    } else if (auto* disc = dynamic_cast<DiscriminativeHead*>(head.get())) {
      for (Index k = 0; k < outputs; ++k) disc->set_covariance(k, factor(c.head.covariance_layout));
    } else if (auto* gen = dynamic_cast<GenerativeHead*>(head.get())) {
      gen->set_log_std(Matrix::Constant(outputs, features, v));
    }
  }
  return head;
}

MLPConfig resolve_backbone(MLPConfig m, Index input_dim) {
  if (m.widths.front() == 0) m.widths.front() = input_dim;
  require(m.widths.front() == input_dim, "backbone.widths[0] does not match the input width");
  for (Index w : m.widths) require(w >= 1, "backbone.widths must be positive");
  return m;
}

/// Feature sets for prediction: one for point-estimate weights, `samples`
/// weight draws for variational ones.
std::vector<Matrix> feature_draws(const Backbone& backbone, const Matrix& x, int samples, Rng& rng) {
  if (!backbone.variational()) return {backbone.features(x)};
  std::vector<Matrix> out;
  out.reserve(samples);
  for (int s = 0; s < samples; ++s) out.push_back(backbone.sample_features(x, rng));
  return out;
}

/// Moment-matched Gaussian of the predictive mixture over feature draws.
std::vector<GaussianPrediction> regression_predictions(const RegressionHead& head,
                                                       const std::vector<Matrix>& draws) {
  const Index n = draws.front().rows();
  std::vector<GaussianPrediction> out(n);
  const double k = static_cast<double>(draws.size());
  for (Index i = 0; i < n; ++i) {
    Vector mean = Vector::Zero(head.output_dim());
    Matrix second = Matrix::Zero(head.output_dim(), head.output_dim());
    for (const Matrix& f : draws) {
      GaussianPrediction p = head.predict(f.row(i).transpose());
      mean += p.mean;
      second += p.covariance + p.mean * p.mean.transpose();
    }
    mean /= k;
    out[i] = {mean, second / k - mean * mean.transpose()};
  }
  return out;
}

Matrix class_probabilities(const VariationalHead& head, const std::vector<Matrix>& draws,
                           int samples, Rng& rng) {
  const Index n = draws.front().rows();
  Matrix probs = Matrix::Zero(n, head.output_dim());
  for (const Matrix& f : draws) {
    for (Index i = 0; i < n; ++i) {
      const Vector phi = f.row(i).transpose();
      if (head.kind() == HeadKind::discriminative) {
        probs.row(i) += static_cast<const DiscriminativeHead&>(head).predict(phi, samples, rng).transpose();
      } else {
        probs.row(i) += static_cast<const GenerativeHead&>(head).predict(phi).transpose();
      }
    }
  }
  return probs / static_cast<double>(draws.size());
}

std::vector<double> density_scores(const GenerativeHead& head, const Matrix& features,
                                   bool normalize) {
  std::vector<double> out(features.rows());
  for (Index i = 0; i < features.rows(); ++i) {
    out[i] = gen_density_score(head, features.row(i).transpose(), normalize);
  }
  return out;
}

std::vector<double> msp_scores(const Matrix& probs) {
  std::vector<double> out(probs.rows());
  for (Index i = 0; i < probs.rows(); ++i) out[i] = msp_score(probs.row(i).transpose());
  return out;
}

double heldout_nll(const ExperimentConfig& c, const Backbone& backbone, const VariationalHead& head,
                   const Dataset& data) {
  Rng rng = make_rng(c.seed, Stream::evaluation);
  const auto draws = feature_draws(backbone, data.X, c.eval.samples, rng);
  if (head.kind() == HeadKind::regression) {
    return regression_metrics(regression_predictions(static_cast<const RegressionHead&>(head), draws),
                              data.Y)
        .nll;
  }
  const Matrix probs = class_probabilities(head, draws, c.eval.samples, rng);
  return classification_metrics(probs, data.labels, c.eval.ece_bins).nll;
}

/// Trains on a split of the training rows and returns the epoch count with the
/// lowest validation NLL, with that NLL.
std::pair<int, double> select_epochs(const ExperimentConfig& c, const Dataset& train) {
  const auto [fit, val] = train_test_split(train, c.data.val_fraction, c.seed + 1);
  require(fit.size() > 0 && val.size() > 0, "data.val_fraction leaves an empty split");
  Rng init = make_rng(c.seed, Stream::init);
  Backbone backbone(c.backbone, init);
  RawHyperparams raw;
  const Index outputs = c.task == Task::regression ? train.Y.cols() : label_classes(train, val);
  auto head = make_head(c, backbone.feature_dim(), outputs, fit, raw);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.kl_weight = raw.kl_weight;
  Trainer trainer(backbone, *head, tc);
  int best_epochs = tc.epochs;
  double best = std::numeric_limits<double>::infinity();
  trainer.fit(fit, [&](const EpochRecord& e) {
    const int done = e.epoch + 1;
    if (done % c.data.val_every != 0 && done != tc.epochs) return;
    const double nll = heldout_nll(c, backbone, *head, val);
    if (nll < best) {
      best = nll;
      best_epochs = done;
    }
  });
  return {best_epochs, best};
}

Json evaluate_models(const ExperimentConfig& c, const PreparedData& data, const Backbone& backbone,
                     const VariationalHead& head) {
  Rng rng = make_rng(c.seed, Stream::evaluation);
  Json m;
  m["task"] = to_string(c.task);
  m["train_size"] = data.train.size();
  m["test_size"] = data.test.size();
  if (head.kind() == HeadKind::regression) {
    const auto& reg = static_cast<const RegressionHead&>(head);
    const auto preds = regression_predictions(reg, feature_draws(backbone, data.test.X, c.eval.samples, rng));
    const RegressionMetrics rm = regression_metrics(preds, data.test.Y);
    m["test_nll"] = rm.nll;
    m["test_rmse"] = rm.rmse;
    // Constant predictor with the training mean and per-output training variance.
    const Vector mu = data.train.Y.colwise().mean().transpose();
    const Vector var =
        (data.train.Y.rowwise() - mu.transpose()).array().square().colwise().mean().transpose();
    std::vector<GaussianPrediction> base(data.test.size(), {mu, Matrix(var.asDiagonal())});
    const RegressionMetrics bm = regression_metrics(base, data.test.Y);
    m["baseline_nll"] = bm.nll;
    m["baseline_rmse"] = bm.rmse;
    if (c.task == Task::toy_gap) {
      double mean_std = 0.0;
      for (const auto& p : preds) mean_std += std::sqrt(p.covariance(0, 0));
      mean_std /= static_cast<double>(preds.size());
      Matrix grid(121, 1);
      for (Index i = 0; i < grid.rows(); ++i) grid(i, 0) = -6.0 + 0.1 * static_cast<double>(i);
      grid(60, 0) = 0.0;
      const auto curve = regression_predictions(reg, feature_draws(backbone, grid, c.eval.samples, rng));
      const double std_zero = std::sqrt(curve[60].covariance(0, 0));
      m["std_at_zero"] = std_zero;
      m["mean_train_std"] = mean_std;
      m["gap_std_ratio"] = std_zero / mean_std;
      Json plot{{"x", Json::array()}, {"mean", Json::array()}, {"std", Json::array()}};
      for (Index i = 0; i < grid.rows(); ++i) {
        plot["x"].push_back(grid(i, 0));
        plot["mean"].push_back(curve[i].mean(0));
        plot["std"].push_back(std::sqrt(curve[i].covariance(0, 0)));
      }
      m["curve"] = plot;
    }
    return m;
  }

  const Matrix probs =
      class_probabilities(head, feature_draws(backbone, data.test.X, c.eval.samples, rng),
                          c.eval.samples, rng);
  const ClassificationMetrics cm = classification_metrics(probs, data.test.labels, c.eval.ece_bins);
  m["accuracy"] = cm.accuracy;
  m["nll"] = cm.nll;
  m["ece"] = cm.ece;
  if (data.ood.empty()) return m;

  // In-distribution reference: training inputs for the far-point task,
  // test inputs otherwise.
  const Matrix& in_x = c.task == Task::half_moon ? data.train.X : data.test.X;
  const Matrix in_probs = class_probabilities(head, feature_draws(backbone, in_x, c.eval.samples, rng),
                                              c.eval.samples, rng);
  const std::vector<double> in_msp = msp_scores(in_probs);
  const Matrix in_features = backbone.features(in_x);
  std::vector<double> in_density, in_calibrated;
  std::vector<ClassGaussian> calibrated;
  const GenerativeHead* gen = head.kind() == HeadKind::generative
                                  ? &static_cast<const GenerativeHead&>(head)
                                  : nullptr;
  if (gen != nullptr) {
    in_density = density_scores(*gen, in_features, c.eval.normalize_by_prior);
    const Matrix train_features = backbone.features(data.train.X);
    calibrated = map_covariance_calibration(train_features, data.train.labels, gen->output_dim(),
                                            gen->priors().wishart, true);
    for (Index i = 0; i < in_features.rows(); ++i) {
      in_calibrated.push_back(calibrated_density_score(*gen, calibrated, in_features.row(i).transpose()));
    }
  }
  for (const auto& [name, x] : data.ood) {
    const Matrix out_probs = class_probabilities(head, feature_draws(backbone, x, c.eval.samples, rng),
                                                 c.eval.samples, rng);
    m["auroc_msp_" + name] = auroc(in_msp, msp_scores(out_probs));
    if (gen != nullptr) {
      const Matrix out_features = backbone.features(x);
      m["auroc_density_" + name] =
          auroc(in_density, density_scores(*gen, out_features, c.eval.normalize_by_prior));
      std::vector<double> out_calibrated;
      for (Index i = 0; i < out_features.rows(); ++i) {
        out_calibrated.push_back(
            calibrated_density_score(*gen, calibrated, out_features.row(i).transpose()));
      }
      m["auroc_calibrated_" + name] = auroc(in_calibrated, out_calibrated);
    }
  }
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

Json run_bandit_task(const ExperimentConfig& c, ExperimentConfig& resolved) {
  ThompsonConfig tc;
  tc.backbone = c.backbone;
  tc.priors = c.head.resolve(static_cast<double>(c.bandit.steps), kWheelActions).priors();
  tc.train = c.train;
  tc.train.kl_weight = c.head.resolve(static_cast<double>(c.bandit.steps), kWheelActions).kl_weight;
  tc.train.mode = TrainMode::full;
  tc.grad_steps_per_update = c.bandit.grad_steps_per_update;
  WheelEnv env(c.bandit.wheel, c.seed);
  ThompsonAgent agent(tc, c.seed);
  const BanditLog log = run_bandit(env, agent, c.bandit.steps, c.bandit.update_period);
  Json summary = log.summary();
  summary["task"] = to_string(c.task);
  summary["delta"] = c.bandit.wheel.delta;
  if (!c.output_dir.empty()) {
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    write_json_file(dir / "config.json", resolved.to_json());
    write_json_file(dir / "metrics.json", summary);
    write_json_file(dir / "head.json", agent.head().to_json());
    write_json_file(dir / "backbone.json", agent.backbone().to_json());
    write_text(dir / "log.jsonl", log.to_jsonl());
  }
  return summary;
}

}  // namespace

Json run_experiment(const ExperimentConfig& config) {
  ExperimentConfig c = config;
  if (c.task == Task::bandit) return run_bandit_task(c, c);

  const PreparedData data = prepare_data(c);
  c.backbone = resolve_backbone(c.backbone, data.train.input_dim());
  std::optional<std::pair<int, double>> selected;
  if (c.data.val_fraction > 0.0 && c.train.mode != TrainMode::post &&
      (c.task == Task::regression || c.task == Task::disc_class || c.task == Task::gen_class)) {
    selected = select_epochs(c, data.train);
    // The written config reproduces the final model directly.
    c.train.epochs = selected->first;
    c.data.val_fraction = 0.0;
  }
  Rng init = make_rng(c.seed, Stream::init);
  Backbone backbone(c.backbone, init);
  RawHyperparams raw;
  std::unique_ptr<VariationalHead> head =
      make_head(c, backbone.feature_dim(), data.outputs, data.train, raw);
  TrainConfig tc = c.train;
  tc.seed = c.seed;
  tc.kl_weight = raw.kl_weight;

  TrainHistory history;
  switch (tc.mode) {
    case TrainMode::full:
      history = train_full(backbone, *head, data.train, tc);
      break;
    case TrainMode::collapsed:
      history = train_collapsed(backbone, *head, data.train, tc);
      break;
    case TrainMode::post: {
      // Two steps: fit features jointly with a head, then refit a fresh head
      // on the frozen features starting from the first head's mean.
      std::unique_ptr<VariationalHead> pre = head->clone();
      TrainHistory first = train_full(backbone, *pre, data.train, tc);
      const Json pj = pre->to_json();
      const Matrix w = pj.contains("W_mean") ? matrix_from_json(pj.at("W_mean"))
                                             : matrix_from_json(pj.at("means"));
      history = train_post(backbone, *head, data.train, tc, w);
      history.epochs.insert(history.epochs.begin(), first.epochs.begin(), first.epochs.end());
      break;
    }
  }

  Json metrics = evaluate_models(c, data, backbone, *head);
  metrics["final_train_loss"] = history.epochs.empty() ? 0.0 : history.epochs.back().train_loss;
  metrics["kl_weight"] = raw.kl_weight;
  if (selected) {
    metrics["selected_epochs"] = selected->first;
    metrics["validation_nll"] = selected->second;
  }

  if (!c.output_dir.empty()) {
    const fs::path dir(c.output_dir);
    fs::create_directories(dir);
    write_json_file(dir / "config.json", c.to_json());
    write_json_file(dir / "metrics.json", metrics);
    write_json_file(dir / "head.json", head->to_json());
    write_json_file(dir / "backbone.json", backbone.to_json());
    write_text(dir / "log.jsonl", history.to_jsonl());
  }
  return metrics;
}

Json evaluate_run(const fs::path& run_dir) {
  const ExperimentConfig c = ExperimentConfig::from_json(read_json_file(run_dir / "config.json"));
  require(c.task != Task::bandit, "evaluate_run: bandit runs are evaluated while they run");
  const PreparedData data = prepare_data(c);
  const Backbone backbone = Backbone::from_json(read_json_file(run_dir / "backbone.json"));
  const std::unique_ptr<VariationalHead> head = head_from_json(read_json_file(run_dir / "head.json"));
  require(backbone.input_dim() == data.train.input_dim(), "evaluate_run: backbone input mismatch");
  require(head->feature_dim() == backbone.feature_dim(), "evaluate_run: head width mismatch");
  return evaluate_models(c, data, backbone, *head);
}

std::size_t run_sweep(const ExperimentConfig& config) {
  require(config.task == Task::regression || config.task == Task::toy_gap,
          "sweep: only regression and toy-gap tasks are supported");
  require(!config.output_dir.empty(), "sweep: output_dir is required");
  const ReformulatedHyperparams base = config.head.reformulated.value_or(ReformulatedHyperparams{});
  auto axis = [](const std::vector<double>& v, double fallback) {
    return v.empty() ? std::vector<double>{fallback} : v;
  };
  const auto ls = axis(config.sweep.l_hat, base.l_hat);
  const auto ps = axis(config.sweep.p_hat, base.p_hat);
  const auto as = axis(config.sweep.alpha_sigma, base.alpha_sigma);
  const auto ss = axis(config.sweep.alpha_s, base.alpha_s);

  const PreparedData data = prepare_data(config);
  const fs::path dir(config.output_dir);
  fs::create_directories(dir);
  std::ostringstream csv;
  csv << std::setprecision(std::numeric_limits<double>::max_digits10);
  csv << "l_hat,p_hat,alpha_sigma,alpha_s,epoch,noise_precision_diag_mean,s_frobenius,s_diag_mean,"
         "train_loss\n";
  std::size_t points = 0;
  for (double l : ls) {
    for (double p : ps) {
      for (double a_sigma : as) {
        for (double a_s : ss) {
          ExperimentConfig c = config;
          c.head.reformulated = ReformulatedHyperparams{l, p, a_sigma, a_s};
          c.backbone = resolve_backbone(c.backbone, data.train.input_dim());
          Rng init = make_rng(c.seed, Stream::init);
          Backbone backbone(c.backbone, init);
          RawHyperparams raw;
          auto head = make_head(c, backbone.feature_dim(), data.outputs, data.train, raw);
          TrainConfig tc = c.train;
          tc.seed = c.seed;
          tc.kl_weight = raw.kl_weight;
          if (tc.mode == TrainMode::post) tc.mode = TrainMode::full;
          auto& reg = static_cast<RegressionHead&>(*head);
          Trainer trainer(backbone, reg, tc);
          trainer.fit(data.train, [&](const EpochRecord& e) {
            const Matrix s = reg.covariance().matrix();
            csv << l << ',' << p << ',' << a_sigma << ',' << a_s << ',' << e.epoch << ','
                << reg.noise_precision().matrix().diagonal().mean() << ',' << s.norm() << ','
                << s.diagonal().mean() << ',' << e.train_loss << '\n';
          });
          ++points;
        }
      }
    }
  }
  write_json_file(dir / "config.json", config.to_json());
  write_text(dir / "sweep.csv", csv.str());
  return points;
}

}  // namespace vbll
