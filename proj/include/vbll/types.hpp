#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace vbll {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;
using Index = Eigen::Index;

using Rng = std::mt19937_64;

// Well-known stream ids. Streams derived from the same seed with different ids
// are statistically independent.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle = 2,
  weight_noise = 3,
  data = 4,
  environment = 5,
  policy = 6,
  oracle = 7,
  evaluation = 8,
  head_init = 9,
};

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return Rng(seq);
}

inline Rng make_rng(std::uint64_t seed, Stream stream) {
  return make_rng(seed, static_cast<std::uint64_t>(stream));
}

inline Matrix standard_normal(Index rows, Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix out(rows, cols);
  for (Index j = 0; j < cols; ++j) {
    for (Index i = 0; i < rows; ++i) out(i, j) = normal(rng);
  }
  return out;
}

/// Thrown when a loss or objective evaluates to NaN or infinity.
class NonFiniteError : public std::runtime_error {
 public:
  explicit NonFiniteError(const std::string& what) : std::runtime_error(what) {}
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw std::invalid_argument(message);
}

}  // namespace vbll
