#pragma once

// Reverse-mode automatic differentiation over small dense matrices.
//
// A Tape records every operation of a forward pass as a node holding its value
// and a local adjoint rule. Tape::backward walks the nodes in reverse creation
// order (a valid reverse topological order) exactly once and accumulates the
// adjoints of leaf nodes into the gradient of the Parameter they were bound to.
//
// Shapes: every value is a Matrix. Binary elementwise operations accept equal
// shapes, a 1x1 operand, a 1xC row against RxC, or an Rx1 column against RxC.

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "vbll/types.hpp"

namespace vbll::ad {

class Parameter {
 public:
  Parameter() = default;
  explicit Parameter(Matrix initial, bool trainable = true)
      : values(std::move(initial)),
        grad(Matrix::Zero(values.rows(), values.cols())),
        requires_grad(trainable) {}

  void zero_grad() { grad.setZero(values.rows(), values.cols()); }
  Index size() const { return values.size(); }

  Matrix values;
  Matrix grad;
  bool requires_grad = true;
};

class Tape;

class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  double scalar() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  bool valid() const { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Matrix& adjoint)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var constant(double value);
  /// Leaf bound to a parameter. Non-trainable parameters behave as constants.
  /// Binding the same parameter again returns the existing leaf.
  Var param(Parameter& p);

  /// Records an operation node. `backprop` is only kept when some parent
  /// needs a gradient.
  Var record(Matrix value, std::initializer_list<Var> parents, Backprop backprop);
  Var record(Matrix value, std::span<const Var> parents, Backprop backprop);

  /// Backpropagates from a 1x1 root. Throws NonFiniteError when the root is
  /// not finite.
  void backward(Var root);

  const Matrix& value(Var v) const { return nodes_[v.id_].value; }
  bool needs_grad(Var v) const { return nodes_[v.id_].needs_grad; }
  void accumulate(Var v, const Matrix& contribution);
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix adjoint;
    Backprop backprop;
    Parameter* leaf = nullptr;
    bool needs_grad = false;
    bool has_adjoint = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
};

// ---- elementwise arithmetic (with the broadcasting rules above) ----
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var hadamard(Var a, Var b);
Var divide(Var a, Var b);

Var exp(Var a);
Var log(Var a);
Var square(Var a);
Var leaky_relu(Var a, double negative_slope);

// ---- linear algebra ----
Var matmul(Var a, Var b);
Var transpose(Var a);

// ---- reductions ----
Var sum(Var a);          ///< 1x1
Var mean(Var a);         ///< 1x1
Var row_sum(Var a);      ///< Rx1
Var col_sum(Var a);      ///< 1xC
Var logsumexp_rows(Var a);  ///< Rx1, shift-stable

// ---- structure ----
/// out(i) = a(i, index[i]); Rx1.
Var pick(Var a, std::span<const int> index);
Var hconcat(std::span<const Var> parts);
Var row(Var a, Index r);
/// Lower-triangular L = strict_lower(off_diag) + diag(exp(log_diag)); log_diag is Nx1.
Var lower_triangular(Var off_diag, Var log_diag);
/// rows * L for the L above, without materializing L.
Var lower_triangular_product(Var rows, Var off_diag, Var log_diag);
/// ||L||_F^2 for the L above; 1x1.
Var lower_triangular_sqnorm(Var off_diag, Var log_diag);

// ---- gradient drivers ----
using LossFunction = std::function<Var(Tape&)>;

struct GradientResult {
  double loss = 0.0;
  std::vector<Matrix> gradients;
};

/// Evaluates `loss_fn` on a fresh tape and returns d loss / d p for each p.
/// Parameter grads are reset before the pass.
GradientResult grad(const LossFunction& loss_fn, std::span<Parameter* const> params);

/// Central differences (f(p+eps) - f(p-eps)) / (2 eps), one coordinate at a time.
std::vector<Matrix> finite_diff(const LossFunction& loss_fn, std::span<Parameter* const> params,
                                double eps);

/// Forward-only evaluation.
double evaluate(const LossFunction& loss_fn);

}  // namespace vbll::ad
