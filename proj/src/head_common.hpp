#pragma once

#include <string>

#include "vbll/checkpoint.hpp"
#include "vbll/hyperparams.hpp"
#include "vbll/triangular_factor.hpp"

namespace vbll::detail {

std::string to_string(FactorLayout layout);
FactorLayout layout_from_string(const std::string& name);

void write_factor(Json& j, const std::string& prefix, const TriangularFactor& factor);
TriangularFactor read_factor(const Json& j, const std::string& prefix, Index dim);

void write_priors(Json& j, const HeadPriors& priors);
HeadPriors read_priors(const Json& j);

}  // namespace vbll::detail
