// vbll: train, evaluate and sweep last-layer models from JSON configs.
//
//   vbll train  --config run.json [--seed N] [--out DIR] [--override key=value]...
//   vbll eval   --run DIR
//   vbll bandit [--config run.json] ...
//   vbll toy    --kind toy-gap|half-moon [--config run.json] ...
//   vbll sweep  --config sweep.json ...

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "vbll/experiment.hpp"

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOptions& opts, bool config_required) {
  auto* cfg = cmd->add_option("--config", opts.config_path, "JSON config file")->check(CLI::ExistingFile);
  if (config_required) cfg->required();
  cmd->add_option("--seed", opts.seed, "random seed (overrides the config)");
  cmd->add_option("--out", opts.out, "output directory (overrides the config)");
  cmd->add_option("--override", opts.overrides, "dotted.key=value, repeatable")->take_all();
}

vbll::ExperimentConfig build_config(const CommonOptions& opts, std::optional<vbll::Task> task) {
  vbll::Json j = opts.config_path.empty() ? vbll::Json::object()
                                          : vbll::read_json_file(opts.config_path);
  if (task) {
    if (j.contains("task") && j.at("task") != vbll::to_string(*task)) {
      throw std::invalid_argument("config task \"" + j.at("task").get<std::string>() +
                                  "\" does not match the command");
    }
    j["task"] = vbll::to_string(*task);
  }
  for (const auto& o : opts.overrides) vbll::apply_override(j, o);
  if (opts.seed) j["seed"] = *opts.seed;
  if (!opts.out.empty()) j["output_dir"] = opts.out;
  return vbll::ExperimentConfig::from_json(j);
}

void print(const vbll::Json& j) { std::cout << j.dump(2) << '\n'; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational Bayesian last-layer models"};
  app.require_subcommand(1);

  CommonOptions train_opts, bandit_opts, toy_opts, sweep_opts;
  auto* train = app.add_subcommand("train", "train and evaluate a model");
  add_common(train, train_opts, true);

  std::string run_dir;
  auto* eval = app.add_subcommand("eval", "re-evaluate a finished run directory");
  eval->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* bandit = app.add_subcommand("bandit", "run Thompson sampling on the wheel bandit");
  add_common(bandit, bandit_opts, false);

  std::string toy_kind = "toy-gap";
  auto* toy = app.add_subcommand("toy", "run a generated toy problem");
  add_common(toy, toy_opts, false);
  toy->add_option("--kind", toy_kind, "toy-gap or half-moon")
      ->check(CLI::IsMember({"toy-gap", "half-moon"}));

  auto* sweep = app.add_subcommand("sweep", "grid over reformulated hyperparameters");
  add_common(sweep, sweep_opts, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      print(vbll::run_experiment(build_config(train_opts, std::nullopt)));
    } else if (eval->parsed()) {
      print(vbll::evaluate_run(run_dir));
    } else if (bandit->parsed()) {
      print(vbll::run_experiment(build_config(bandit_opts, vbll::Task::bandit)));
    } else if (toy->parsed()) {
      print(vbll::run_experiment(build_config(toy_opts, vbll::task_from_string(toy_kind))));
    } else if (sweep->parsed()) {
      const auto config = build_config(sweep_opts, std::nullopt);
      const std::size_t points = vbll::run_sweep(config);
      std::cout << "wrote " << points << " grid points to " << config.output_dir << "/sweep.csv\n";
    }
  } catch (const vbll::NonFiniteError& e) {
    std::cerr << "error: non-finite training: " << e.what() << '\n';
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
