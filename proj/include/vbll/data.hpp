#pragma once

#include <span>
#include <vector>

#include "vbll/types.hpp"

namespace vbll {

/// In-memory supervised dataset. Regression uses Y (T x N_y); classification
/// uses labels. `observed` is an optional T x N_y 0/1 mask marking which
/// target entries were seen (bandit replay data observes one action per row).
struct Dataset {
  Matrix X;
  Matrix Y;
  std::vector<int> labels;
  Matrix observed;

  Index size() const { return X.rows(); }
  Index input_dim() const { return X.cols(); }
  bool has_mask() const { return observed.size() > 0; }
  bool is_classification() const { return !labels.empty(); }

  Dataset subset(std::span<const Index> rows) const;
};

/// Per-class counts of `labels` over `n_classes` classes.
std::vector<long> class_counts(std::span<const int> labels, Index n_classes);

}  // namespace vbll
