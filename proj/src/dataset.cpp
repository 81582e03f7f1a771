#include "vbll/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace vbll {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_row(const std::string& line, std::vector<double>& out) {
  out.clear();
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    const std::string t = trim(cell);
    if (t.empty()) return false;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return false;
    out.push_back(v);
  }
  if (!line.empty() && line.back() == ',') return false;
  return !out.empty();
}

}  // namespace

NormalizationStats NormalizationStats::fit(const Dataset& data) {
  require(data.size() >= 1, "NormalizationStats: empty dataset");
  NormalizationStats s;
  const double n = static_cast<double>(data.size());
  s.x_mean = data.X.colwise().mean().transpose();
  s.x_std.resize(data.X.cols());
  for (Index j = 0; j < data.X.cols(); ++j) {
    const double var = (data.X.col(j).array() - s.x_mean(j)).square().sum() / n;
    if (var <= 0.0) {
      std::cerr << "warning: input column " << j << " has zero variance; std set to 1\n";
      s.x_std(j) = 1.0;
    } else {
      s.x_std(j) = std::sqrt(var);
    }
  }
  if (data.Y.size() > 0) {
    s.y_mean = data.Y.colwise().mean().transpose();
  } else {
    s.y_mean = Vector();
  }
  return s;
}

Dataset NormalizationStats::apply(const Dataset& data) const {
  require(data.X.cols() == x_mean.size(), "NormalizationStats::apply: input width mismatch");
  Dataset out = data;
  out.X = ((data.X.rowwise() - x_mean.transpose()).array().rowwise() / x_std.transpose().array())
              .matrix();
  if (data.Y.size() > 0 && y_mean.size() == data.Y.cols()) {
    out.Y = data.Y.rowwise() - y_mean.transpose();
  }
  return out;
}

LoadedDataset load_dataset_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path.string());
  require(options.target_columns >= 0, "load_dataset_csv: negative target column count");
  if (options.target_kind == TargetKind::label) {
    require(options.target_columns == 1, "load_dataset_csv: labels occupy one column");
  }
  std::vector<std::vector<double>> rows;
  std::vector<double> row;
  std::string line;
  long line_no = 0;
  std::size_t width = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (!parse_row(line, row)) {
      if (rows.empty() && line_no == 1) continue;  // header
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": malformed row");
    }
    if (width == 0) width = row.size();
    if (row.size() != width) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected " + std::to_string(width) + " columns, found " +
                               std::to_string(row.size()));
    }
    rows.push_back(row);
  }
  require(!rows.empty(), "load_dataset_csv: no data rows in " + path.string());
  const Index targets = options.target_columns;
  require(static_cast<Index>(width) > targets, "load_dataset_csv: no input columns left");
  const Index nx = static_cast<Index>(width) - targets;
  const auto n = static_cast<Index>(rows.size());

  LoadedDataset out;
  Dataset& d = out.data;
  d.X.resize(n, nx);
  if (options.target_kind == TargetKind::regression && targets > 0) d.Y.resize(n, targets);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < nx; ++j) d.X(i, j) = rows[i][j];
    if (options.target_kind == TargetKind::regression) {
      for (Index j = 0; j < targets; ++j) d.Y(i, j) = rows[i][nx + j];
    } else {
      const double v = rows[i][nx];
      if (v < 0.0 || v != std::floor(v)) {
        throw std::runtime_error(path.string() + ": row " + std::to_string(i + 1) +
                                 " has a non-integer label");
      }
      d.labels.push_back(static_cast<int>(v));
    }
  }
  if (options.normalize) {
    out.stats = NormalizationStats::fit(d);
    d = out.stats.apply(d);
  }
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (Index i = 0; i < data.size(); ++i) {
    for (Index j = 0; j < data.X.cols(); ++j) out << (j ? "," : "") << data.X(i, j);
    if (data.is_classification()) {
      out << ',' << data.labels[i];
    } else {
      for (Index j = 0; j < data.Y.cols(); ++j) out << ',' << data.Y(i, j);
    }
    out << '\n';
  }
}

std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed) {
  require(test_fraction > 0.0 && test_fraction < 1.0, "train_test_split: fraction in (0, 1)");
  std::vector<Index> perm(data.size());
  std::iota(perm.begin(), perm.end(), Index{0});
  Rng rng = make_rng(seed, Stream::data);
  std::shuffle(perm.begin(), perm.end(), rng);
  const auto n_test = std::max<Index>(
      1, static_cast<Index>(std::llround(test_fraction * static_cast<double>(data.size()))));
  require(n_test < data.size(), "train_test_split: dataset too small");
  std::vector<Index> test(perm.begin(), perm.begin() + n_test);
  std::vector<Index> train(perm.begin() + n_test, perm.end());
  return {data.subset(train), data.subset(test)};
}

Dataset make_cubic_gap(const CubicGapParams& params, std::uint64_t seed) {
  require(params.n >= 1 && params.noise_std >= 0.0, "make_cubic_gap: invalid parameters");
  Rng rng = make_rng(seed, Stream::data);
  std::uniform_real_distribution<double> u(2.0, 4.0);
  std::bernoulli_distribution side(0.5);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset d;
  d.X.resize(params.n, 1);
  d.Y.resize(params.n, 1);
  for (Index i = 0; i < params.n; ++i) {
    const double mag = u(rng);
    const double x = side(rng) ? mag : -mag;
    d.X(i, 0) = x;
    d.Y(i, 0) = params.coefficient * x * x * x + params.noise_std * noise(rng);
  }
  return d;
}

Dataset make_half_moon(const HalfMoonParams& params, std::uint64_t seed) {
  require(params.n >= 2 && params.noise_std >= 0.0, "make_half_moon: invalid parameters");
  Rng rng = make_rng(seed, Stream::data);
  std::normal_distribution<double> noise(0.0, 1.0);
  const Index n_outer = (params.n + 1) / 2;
  const Index n_inner = params.n - n_outer;
  Dataset d;
  d.X.resize(params.n, 2);
  d.labels.resize(params.n);
  auto angle = [](Index i, Index count) {
    return count <= 1 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
  };
  for (Index i = 0; i < n_outer; ++i) {
    const double t = angle(i, n_outer);
    d.X(i, 0) = std::cos(t) + params.noise_std * noise(rng);
    d.X(i, 1) = std::sin(t) + params.noise_std * noise(rng);
    d.labels[i] = 0;
  }
  for (Index i = 0; i < n_inner; ++i) {
    const double t = angle(i, n_inner);
    d.X(n_outer + i, 0) = 1.0 - std::cos(t) + params.noise_std * noise(rng);
    d.X(n_outer + i, 1) = 0.5 - std::sin(t) + params.noise_std * noise(rng);
    d.labels[n_outer + i] = 1;
  }
  return d;
}

}  // namespace vbll
