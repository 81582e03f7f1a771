#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "vbll/data.hpp"

namespace vbll {

enum class TargetKind { regression, label };

struct CsvOptions {
  /// Trailing columns holding targets (regression) or a single label column.
  /// Zero reads every column as an input.
  Index target_columns = 1;
  TargetKind target_kind = TargetKind::regression;
  bool normalize = false;
};

/// Input standardization and output centering from training statistics.
struct NormalizationStats {
  Vector x_mean;
  Vector x_std;
  Vector y_mean;

  bool empty() const { return x_mean.size() == 0; }
  /// Statistics of `data`; zero-variance columns get std 1 and a warning on stderr.
  static NormalizationStats fit(const Dataset& data);
  /// Standardizes X and centers Y (outputs are not rescaled).
  Dataset apply(const Dataset& data) const;
};

struct LoadedDataset {
  Dataset data;
  NormalizationStats stats;
};

/// Reads a comma-separated file. A first row that does not parse as numbers is
/// taken as a header. Malformed rows raise an error naming the line.
LoadedDataset load_dataset_csv(const std::filesystem::path& path, const CsvOptions& options);
/// Writes X then the targets (or labels) as comma-separated rows.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);

/// Splits rows into (train, test) with a seeded permutation.
std::pair<Dataset, Dataset> train_test_split(const Dataset& data, double test_fraction,
                                             std::uint64_t seed);

struct CubicGapParams {
  Index n = 100;
  double coefficient = 0.1;
  double noise_std = 0.1;
};

struct HalfMoonParams {
  Index n = 1000;
  double noise_std = 0.2;
};

/// x uniform on [-4, -2] U [2, 4], y = c x^3 + eps.
Dataset make_cubic_gap(const CubicGapParams& params, std::uint64_t seed);
/// Two interleaved half circles with Gaussian noise; labels 0 and 1, n/2 each
/// (the first class gets the extra point when n is odd).
Dataset make_half_moon(const HalfMoonParams& params, std::uint64_t seed);

}  // namespace vbll
