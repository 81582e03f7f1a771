#pragma once

#include <span>

#include "vbll/types.hpp"

namespace vbll {

/// log sum_k exp(v_k), shifted by the maximum. Throws on empty input.
double logsumexp(std::span<const double> v);
double logsumexp(const Vector& v);

/// Shift-stable softmax; result sums to one.
Vector softmax(const Vector& scores);

/// Digamma function for x > 0: upward recurrence to x >= 6, then the
/// asymptotic series. Absolute error below 1e-12 on (0, inf).
double digamma(double x);

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace vbll
