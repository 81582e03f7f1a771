#include "vbll/backbone.hpp"

#include <cmath>

namespace vbll {

void MLPConfig::validate() const {
  require(!widths.empty(), "MLPConfig: widths must be non-empty");
  for (Index w : widths) require(w >= 1, "MLPConfig: widths must be >= 1");
  require(negative_slope >= 0.0 && negative_slope < 1.0, "MLPConfig: slope must be in [0, 1)");
  require(weight_decay >= 0.0, "MLPConfig: weight_decay must be nonnegative");
}

namespace {

Matrix leaky(const Matrix& z, double slope) {
  return z.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

Matrix apply_layer(const MLPConfig& config, const DenseLayer& layer, const Matrix& h) {
  Matrix z = h * layer.weight;
  z.rowwise() += layer.bias.row(0);
  Matrix a = leaky(z, config.negative_slope);
  if (config.residual && layer.weight.rows() == layer.weight.cols()) a += h;
  return a;
}

Matrix uniform_matrix(Index rows, Index cols, double bound, Rng& rng) {
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < cols; ++j) m(i, j) = u(rng);
  }
  return m;
}

}  // namespace

Matrix mlp_forward_batch(const MLPConfig& config, std::span<const DenseLayer> layers,
                         const Matrix& x) {
  require(layers.size() == config.layer_count(), "mlp_forward: layer count mismatch");
  require(x.cols() == config.input_dim(), "mlp_forward: input width mismatch");
  Matrix h = x;
  for (const DenseLayer& layer : layers) {
    require(layer.weight.rows() == h.cols(), "mlp_forward: weight shape mismatch");
    h = apply_layer(config, layer, h);
  }
  return h;
}

Vector mlp_forward(const MLPConfig& config, std::span<const DenseLayer> layers, const Vector& x) {
  return mlp_forward_batch(config, layers, x.transpose()).row(0).transpose();
}

double gaussian_weight_kl(const Matrix& mean, const Matrix& log_std, double prior_std) {
  require(prior_std > 0.0, "gaussian_weight_kl: prior std must be positive");
  const double prior_var = prior_std * prior_std;
  const auto var = (2.0 * log_std.array()).exp();
  return ((std::log(prior_std) - log_std.array()) + (var + mean.array().square()) / (2.0 * prior_var) -
          0.5)
      .sum();
}

double layer_prior_std(const MLPConfig& config, Index n_in) {
  if (config.weight_prior_std > 0.0) return config.weight_prior_std;
  return 2.0 / std::pow(static_cast<double>(n_in), 0.25);
}

BbbSample bbb_sample_forward(const MLPConfig& config, const VariationalWeights& weights,
                             const Vector& x, Rng& rng) {
  require(weights.size() == config.layer_count(), "bbb_sample_forward: layer count mismatch");
  std::vector<DenseLayer> sampled;
  sampled.reserve(weights.size());
  BbbSample out;
  for (const VariationalLayer& layer : weights) {
    DenseLayer theta;
    theta.weight = layer.mean.weight +
                   (layer.log_std.weight.array().exp() *
                    standard_normal(layer.mean.weight.rows(), layer.mean.weight.cols(), rng).array())
                       .matrix();
    theta.bias = layer.mean.bias +
                 (layer.log_std.bias.array().exp() *
                  standard_normal(1, layer.mean.bias.cols(), rng).array())
                     .matrix();
    const double prior = layer_prior_std(config, layer.mean.weight.rows());
    out.weight_kl += gaussian_weight_kl(layer.mean.weight, layer.log_std.weight, prior) +
                     gaussian_weight_kl(layer.mean.bias, layer.log_std.bias, prior);
    sampled.push_back(std::move(theta));
  }
  out.features = mlp_forward(config, sampled, x);
  return out;
}

Backbone::Backbone(MLPConfig config, Rng& init_rng) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t l = 0; l < config_.layer_count(); ++l) {
    const Index n_in = config_.widths[l];
    const Index n_out = config_.widths[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(n_in));
    Layer layer;
    layer.weight = ad::Parameter(uniform_matrix(n_in, n_out, bound, init_rng));
    layer.bias = ad::Parameter(uniform_matrix(1, n_out, bound, init_rng));
    if (variational()) {
      layer.weight_log_std =
          ad::Parameter(Matrix::Constant(n_in, n_out, config_.init_log_std), config_.train_log_std);
      layer.bias_log_std =
          ad::Parameter(Matrix::Constant(1, n_out, config_.init_log_std), config_.train_log_std);
    }
    layers_.push_back(std::move(layer));
  }
}

ad::Var Backbone::forward(ad::Tape& tape, const Matrix& x, Rng* weight_noise) {
  require(x.cols() == input_dim(), "Backbone::forward: input width mismatch");
  ad::Var h = tape.constant(x);
  for (Layer& layer : layers_) {
    ad::Var w = tape.param(layer.weight);
    ad::Var b = tape.param(layer.bias);
    if (variational() && weight_noise != nullptr) {
      const Matrix zw = standard_normal(w.rows(), w.cols(), *weight_noise);
      const Matrix zb = standard_normal(b.rows(), b.cols(), *weight_noise);
      w = w + ad::hadamard(ad::exp(tape.param(layer.weight_log_std)), tape.constant(zw));
      b = b + ad::hadamard(ad::exp(tape.param(layer.bias_log_std)), tape.constant(zb));
    }
    ad::Var a = ad::leaky_relu(ad::matmul(h, w) + b, config_.negative_slope);
    h = (config_.residual && w.rows() == w.cols()) ? h + a : a;
  }
  return h;
}

Matrix Backbone::features(const Matrix& x) const {
  return mlp_forward_batch(config_, dense_layers(), x);
}

Matrix Backbone::sample_features(const Matrix& x, Rng& rng) const {
  require(variational(), "Backbone::sample_features: variational weights required");
  std::vector<DenseLayer> sampled;
  for (const Layer& layer : layers_) {
    DenseLayer theta;
    theta.weight = layer.weight.values +
                   (layer.weight_log_std.values.array().exp() *
                    standard_normal(layer.weight.values.rows(), layer.weight.values.cols(), rng)
                        .array())
                       .matrix();
    theta.bias = layer.bias.values +
                 (layer.bias_log_std.values.array().exp() *
                  standard_normal(1, layer.bias.values.cols(), rng).array())
                     .matrix();
    sampled.push_back(std::move(theta));
  }
  return mlp_forward_batch(config_, sampled, x);
}

ad::Var Backbone::log_prior(ad::Tape& tape) {
  if (variational() || config_.weight_decay == 0.0 || layers_.empty()) return tape.constant(0.0);
  ad::Var total = tape.constant(0.0);
  for (Layer& layer : layers_) {
    total = total + ad::sum(ad::square(tape.param(layer.weight))) +
            ad::sum(ad::square(tape.param(layer.bias)));
  }
  return -0.5 * config_.weight_decay * total;
}

double Backbone::log_prior() const {
  if (variational()) return 0.0;
  double total = 0.0;
  for (const Layer& layer : layers_) {
    total += layer.weight.values.squaredNorm() + layer.bias.values.squaredNorm();
  }
  return -0.5 * config_.weight_decay * total;
}

ad::Var Backbone::weight_kl(ad::Tape& tape) {
  if (!variational() || layers_.empty()) return tape.constant(0.0);
  ad::Var total = tape.constant(0.0);
  auto term = [&tape](ad::Parameter& mean, ad::Parameter& log_std, double prior_std) {
    ad::Var ls = tape.param(log_std);
    ad::Var m = tape.param(mean);
    const double prior_var = prior_std * prior_std;
    ad::Var per = (std::log(prior_std) - 0.5) - ls +
                  (ad::exp(2.0 * ls) + ad::square(m)) * (0.5 / prior_var);
    return ad::sum(per);
  };
  for (Layer& layer : layers_) {
    const double prior = layer_prior_std(config_, layer.weight.values.rows());
    total = total + term(layer.weight, layer.weight_log_std, prior) +
            term(layer.bias, layer.bias_log_std, prior);
  }
  return total;
}

double Backbone::weight_kl() const {
  if (!variational()) return 0.0;
  double total = 0.0;
  for (const Layer& layer : layers_) {
    const double prior = layer_prior_std(config_, layer.weight.values.rows());
    total += gaussian_weight_kl(layer.weight.values, layer.weight_log_std.values, prior) +
             gaussian_weight_kl(layer.bias.values, layer.bias_log_std.values, prior);
  }
  return total;
}

std::vector<ad::Parameter*> Backbone::parameters() {
  std::vector<ad::Parameter*> out;
  for (Layer& layer : layers_) {
    out.push_back(&layer.weight);
    out.push_back(&layer.bias);
    if (variational() && layer.weight_log_std.requires_grad) {
      out.push_back(&layer.weight_log_std);
      out.push_back(&layer.bias_log_std);
    }
  }
  return out;
}

std::vector<DenseLayer> Backbone::dense_layers() const {
  std::vector<DenseLayer> out;
  out.reserve(layers_.size());
  for (const Layer& layer : layers_) out.push_back({layer.weight.values, layer.bias.values});
  return out;
}

VariationalWeights Backbone::variational_weights() const {
  require(variational(), "Backbone::variational_weights: variational weights required");
  VariationalWeights out;
  for (const Layer& layer : layers_) {
    out.push_back({{layer.weight.values, layer.bias.values},
                   {layer.weight_log_std.values, layer.bias_log_std.values}});
  }
  return out;
}

void Backbone::set_dense_layers(std::span<const DenseLayer> layers) {
  require(layers.size() == layers_.size(), "set_dense_layers: layer count mismatch");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    require(layers[l].weight.rows() == layers_[l].weight.values.rows() &&
                layers[l].weight.cols() == layers_[l].weight.values.cols() &&
                layers[l].bias.cols() == layers_[l].bias.values.cols(),
            "set_dense_layers: shape mismatch");
    layers_[l].weight.values = layers[l].weight;
    layers_[l].bias.values = layers[l].bias;
  }
}

void Backbone::set_log_std(double value) {
  require(variational(), "Backbone::set_log_std: variational weights required");
  for (Layer& layer : layers_) {
    layer.weight_log_std.values.setConstant(value);
    layer.bias_log_std.values.setConstant(value);
  }
}

Json to_json(const MLPConfig& config) {
  Json j;
  j["widths"] = config.widths;
  j["negative_slope"] = config.negative_slope;
  j["residual"] = config.residual;
  j["weight_decay"] = config.weight_decay;
  j["mode"] = config.mode == WeightMode::variational ? "variational" : "map";
  j["weight_prior_std"] = config.weight_prior_std;
  j["init_log_std"] = config.init_log_std;
  j["train_log_std"] = config.train_log_std;
  return j;
}

MLPConfig mlp_config_from_json(const Json& j) {
  MLPConfig c;
  c.widths = j.value("widths", c.widths);
  c.negative_slope = j.value("negative_slope", c.negative_slope);
  c.residual = j.value("residual", c.residual);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  const std::string mode = j.value("mode", std::string("map"));
  require(mode == "map" || mode == "variational", "MLPConfig: mode must be map or variational");
  c.mode = mode == "variational" ? WeightMode::variational : WeightMode::map;
  c.weight_prior_std = j.value("weight_prior_std", c.weight_prior_std);
  c.init_log_std = j.value("init_log_std", c.init_log_std);
  c.train_log_std = j.value("train_log_std", c.train_log_std);
  // A leading 0 stands for the input width of the data and is resolved later.
  MLPConfig check = c;
  if (!check.widths.empty() && check.widths.front() == 0) check.widths.front() = 1;
  check.validate();
  return c;
}

Json Backbone::to_json() const {
  Json j;
  j["config"] = vbll::to_json(config_);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + "_";
    j[p + "weight"] = matrix_to_json(layers_[l].weight.values);
    j[p + "bias"] = matrix_to_json(layers_[l].bias.values);
    if (variational()) {
      j[p + "weight_log_std"] = matrix_to_json(layers_[l].weight_log_std.values);
      j[p + "bias_log_std"] = matrix_to_json(layers_[l].bias_log_std.values);
    }
  }
  return j;
}

Backbone Backbone::from_json(const Json& j) {
  Backbone b;
  b.config_ = mlp_config_from_json(j.at("config"));
  for (std::size_t l = 0; l < b.config_.layer_count(); ++l) {
    const Index n_in = b.config_.widths[l];
    const Index n_out = b.config_.widths[l + 1];
    const std::string p = "layer" + std::to_string(l) + "_";
    Layer layer;
    layer.weight = ad::Parameter(read_array(j, p + "weight", n_in, n_out));
    layer.bias = ad::Parameter(read_array(j, p + "bias", 1, n_out));
    if (b.variational()) {
      layer.weight_log_std =
          ad::Parameter(read_array(j, p + "weight_log_std", n_in, n_out), b.config_.train_log_std);
      layer.bias_log_std =
          ad::Parameter(read_array(j, p + "bias_log_std", 1, n_out), b.config_.train_log_std);
    }
    b.layers_.push_back(std::move(layer));
  }
  return b;
}

}  // namespace vbll
