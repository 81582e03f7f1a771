#include "vbll/heads.hpp"

#include <stdexcept>

#include "head_common.hpp"
#include "vbll/discriminative_head.hpp"
#include "vbll/generative_head.hpp"
#include "vbll/regression_head.hpp"

namespace vbll {

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::regression: return "regression";
    case HeadKind::discriminative: return "discriminative";
    case HeadKind::generative: return "generative";
  }
  return "unknown";
}

HeadKind head_kind_from_string(const std::string& name) {
  if (name == "regression") return HeadKind::regression;
  if (name == "discriminative") return HeadKind::discriminative;
  if (name == "generative") return HeadKind::generative;
  throw std::invalid_argument("unknown head kind '" + name + "'");
}

std::unique_ptr<VariationalHead> head_from_json(const Json& j) {
  switch (head_kind_from_string(j.at("kind").get<std::string>())) {
    case HeadKind::regression:
      return std::make_unique<RegressionHead>(RegressionHead::from_json(j));
    case HeadKind::discriminative:
      return std::make_unique<DiscriminativeHead>(DiscriminativeHead::from_json(j));
    case HeadKind::generative:
      return std::make_unique<GenerativeHead>(GenerativeHead::from_json(j));
  }
  throw std::invalid_argument("head_from_json: unknown kind");
}

namespace detail {

std::string to_string(FactorLayout layout) {
  return layout == FactorLayout::diagonal ? "diagonal" : "dense";
}

FactorLayout layout_from_string(const std::string& name) {
  if (name == "dense") return FactorLayout::dense;
  if (name == "diagonal") return FactorLayout::diagonal;
  throw std::invalid_argument("unknown factor layout '" + name + "'");
}

void write_factor(Json& j, const std::string& prefix, const TriangularFactor& factor) {
  j[prefix + "_layout"] = to_string(factor.layout());
  j[prefix + "_log_diag"] = matrix_to_json(factor.log_diag());
  if (!factor.is_diagonal()) j[prefix + "_off_diag"] = matrix_to_json(factor.off_diag());
}

TriangularFactor read_factor(const Json& j, const std::string& prefix, Index dim) {
  const FactorLayout layout = layout_from_string(j.at(prefix + "_layout").get<std::string>());
  Vector ld = read_array(j, prefix + "_log_diag", dim, 1).col(0);
  if (layout == FactorLayout::diagonal) return TriangularFactor(std::move(ld));
  return TriangularFactor(read_array(j, prefix + "_off_diag", dim, dim), std::move(ld));
}

void write_priors(Json& j, const HeadPriors& priors) {
  j["prior_scale"] = priors.prior_scale;
  j["wishart_nu_tilde"] = priors.wishart.nu_tilde;
  j["wishart_scale"] = priors.wishart.scale;
}

HeadPriors read_priors(const Json& j) {
  HeadPriors p;
  p.prior_scale = j.at("prior_scale").get<double>();
  p.wishart.nu_tilde = j.at("wishart_nu_tilde").get<double>();
  p.wishart.scale = j.at("wishart_scale").get<double>();
  return p;
}

}  // namespace detail
}  // namespace vbll
