#include "vbll/data.hpp"

namespace vbll {

Dataset Dataset::subset(std::span<const Index> rows) const {
  Dataset out;
  const auto n = static_cast<Index>(rows.size());
  out.X.resize(n, X.cols());
  if (Y.size() > 0) out.Y.resize(n, Y.cols());
  if (has_mask()) out.observed.resize(n, observed.cols());
  if (!labels.empty()) out.labels.resize(rows.size());
  for (Index i = 0; i < n; ++i) {
    const Index r = rows[i];
    require(r >= 0 && r < size(), "Dataset::subset: row out of range");
    out.X.row(i) = X.row(r);
    if (Y.size() > 0) out.Y.row(i) = Y.row(r);
    if (has_mask()) out.observed.row(i) = observed.row(r);
    if (!labels.empty()) out.labels[i] = labels[r];
  }
  return out;
}

std::vector<long> class_counts(std::span<const int> labels, Index n_classes) {
  std::vector<long> counts(n_classes, 0);
  for (int y : labels) {
    require(y >= 0 && y < n_classes, "class_counts: label out of range");
    ++counts[y];
  }
  return counts;
}

}  // namespace vbll
