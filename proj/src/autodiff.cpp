#include "vbll/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace vbll::ad {

const Matrix& Var::value() const { return tape_->value(*this); }

double Var::scalar() const {
  const Matrix& v = value();
  require(v.rows() == 1 && v.cols() == 1, "Var::scalar on non-scalar value");
  return v(0, 0);
}

Var Tape::constant(Matrix value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(double value) { return constant(Matrix::Constant(1, 1, value)); }

Var Tape::param(Parameter& p) {
  if (auto it = bound_.find(&p); it != bound_.end()) return Var(this, it->second);
  bound_.emplace(&p, nodes_.size());
  Node node;
  node.value = p.values;
  if (p.requires_grad) {
    node.leaf = &p;
    node.needs_grad = true;
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Matrix value, std::initializer_list<Var> parents, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                std::move(backprop));
}

Var Tape::record(Matrix value, std::span<const Var> parents, Backprop backprop) {
  Node node;
  node.value = std::move(value);
  for (const Var& p : parents) {
    if (p.tape_ != this) throw std::invalid_argument("operand recorded on a different tape");
    if (nodes_[p.id_].needs_grad) node.needs_grad = true;
  }
  if (node.needs_grad) node.backprop = std::move(backprop);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::accumulate(Var v, const Matrix& contribution) {
  Node& node = nodes_[v.id_];
  if (!node.needs_grad) return;
  if (!node.has_adjoint) {
    node.adjoint = contribution;
    node.has_adjoint = true;
  } else {
    node.adjoint += contribution;
  }
}

void Tape::backward(Var root) {
  const Matrix& rv = value(root);
  require(rv.rows() == 1 && rv.cols() == 1, "backward requires a scalar root");
  if (!std::isfinite(rv(0, 0))) {
    std::ostringstream msg;
    msg << "non-finite loss value " << rv(0, 0);
    throw NonFiniteError(msg.str());
  }
  for (Node& n : nodes_) {
    n.has_adjoint = false;
  }
  accumulate(root, Matrix::Ones(1, 1));
  for (std::size_t i = root.id_ + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_adjoint) continue;
    if (node.backprop) node.backprop(*this, node.adjoint);
    if (node.leaf != nullptr) node.leaf->grad += node.adjoint;
  }
}

namespace {

struct Shape {
  Index rows;
  Index cols;
};

Shape broadcast_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return {a.rows(), a.cols()};
  auto compatible = [](const Matrix& small, const Matrix& big) {
    if (small.rows() == 1 && small.cols() == 1) return true;
    if (small.rows() == 1 && small.cols() == big.cols()) return true;
    if (small.cols() == 1 && small.rows() == big.rows()) return true;
    return false;
  };
  if (compatible(b, a)) return {a.rows(), a.cols()};
  if (compatible(a, b)) return {b.rows(), b.cols()};
  std::ostringstream msg;
  msg << op << ": incompatible shapes " << a.rows() << "x" << a.cols() << " and " << b.rows()
      << "x" << b.cols();
  throw std::invalid_argument(msg.str());
}

Matrix expand(const Matrix& m, Shape s) {
  if (m.rows() == s.rows && m.cols() == s.cols) return m;
  return m.replicate(s.rows / m.rows(), s.cols / m.cols());
}

// Sums a full-shape adjoint back onto the operand's (possibly broadcast) shape.
Matrix reduce_to(const Matrix& adj, Index rows, Index cols) {
  if (adj.rows() == rows && adj.cols() == cols) return adj;
  if (rows == 1 && cols == 1) return Matrix::Constant(1, 1, adj.sum());
  if (rows == 1) return adj.colwise().sum();
  return adj.rowwise().sum();
}

}  // namespace

Var operator+(Var a, Var b) {
  Tape& t = a.tape();
  Shape s = broadcast_shape(a.value(), b.value(), "add");
  Matrix out = expand(a.value(), s) + expand(b.value(), s);
  Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, reduce_to(adj, ar, ac));
    tp.accumulate(b, reduce_to(adj, br, bc));
  });
}

Var operator-(Var a, Var b) {
  Tape& t = a.tape();
  Shape s = broadcast_shape(a.value(), b.value(), "sub");
  Matrix out = expand(a.value(), s) - expand(b.value(), s);
  Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, reduce_to(adj, ar, ac));
    tp.accumulate(b, reduce_to(-adj, br, bc));
  });
}

Var operator-(Var a) {
  return a.tape().record(-a.value(), {a},
                         [=](Tape& tp, const Matrix& adj) { tp.accumulate(a, -adj); });
}

Var operator+(Var a, double c) {
  Matrix out = a.value().array() + c;
  return a.tape().record(std::move(out), {a},
                         [=](Tape& tp, const Matrix& adj) { tp.accumulate(a, adj); });
}
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a + (-c); }
Var operator-(double c, Var a) { return (-a) + c; }

Var operator*(Var a, double c) {
  return a.tape().record(a.value() * c, {a},
                         [=](Tape& tp, const Matrix& adj) { tp.accumulate(a, adj * c); });
}
Var operator*(double c, Var a) { return a * c; }

Var hadamard(Var a, Var b) {
  Tape& t = a.tape();
  Shape s = broadcast_shape(a.value(), b.value(), "hadamard");
  Matrix ea = expand(a.value(), s);
  Matrix eb = expand(b.value(), s);
  Matrix out = ea.cwiseProduct(eb);
  Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& adj) {
    if (tp.needs_grad(a)) tp.accumulate(a, reduce_to(adj.cwiseProduct(eb), ar, ac));
    if (tp.needs_grad(b)) tp.accumulate(b, reduce_to(adj.cwiseProduct(ea), br, bc));
  });
}

Var divide(Var a, Var b) {
  Tape& t = a.tape();
  Shape s = broadcast_shape(a.value(), b.value(), "divide");
  Matrix ea = expand(a.value(), s);
  Matrix eb = expand(b.value(), s);
  Matrix out = ea.cwiseQuotient(eb);
  Index ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return t.record(out, {a, b}, [=](Tape& tp, const Matrix& adj) {
    if (tp.needs_grad(a)) tp.accumulate(a, reduce_to(adj.cwiseQuotient(eb), ar, ac));
    if (tp.needs_grad(b)) {
      Matrix g = -(adj.cwiseProduct(out)).cwiseQuotient(eb);
      tp.accumulate(b, reduce_to(g, br, bc));
    }
  });
}

Var exp(Var a) {
  Matrix out = a.value().array().exp();
  return a.tape().record(out, {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.cwiseProduct(out));
  });
}

Var log(Var a) {
  Matrix out = a.value().array().log();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.cwiseQuotient(tp.value(a)));
  });
}

Var square(Var a) {
  Matrix out = a.value().array().square();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, 2.0 * adj.cwiseProduct(tp.value(a)));
  });
}

Var leaky_relu(Var a, double negative_slope) {
  const Matrix& x = a.value();
  Matrix slope = (x.array() >= 0.0).select(Matrix::Ones(x.rows(), x.cols()),
                                           Matrix::Constant(x.rows(), x.cols(), negative_slope));
  Matrix out = x.cwiseProduct(slope);
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.cwiseProduct(slope));
  });
}

Var matmul(Var a, Var b) {
  require(a.cols() == b.rows(), "matmul: inner dimensions differ");
  Matrix out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [=](Tape& tp, const Matrix& adj) {
    if (tp.needs_grad(a)) tp.accumulate(a, adj * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate(b, tp.value(a).transpose() * adj);
  });
}

Var transpose(Var a) {
  Matrix out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.transpose());
  });
}

Var sum(Var a) {
  Index r = a.rows(), c = a.cols();
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum()), {a},
                         [=](Tape& tp, const Matrix& adj) {
                           tp.accumulate(a, Matrix::Constant(r, c, adj(0, 0)));
                         });
}

Var mean(Var a) {
  Index r = a.rows(), c = a.cols();
  double n = static_cast<double>(r * c);
  return a.tape().record(Matrix::Constant(1, 1, a.value().sum() / n), {a},
                         [=](Tape& tp, const Matrix& adj) {
                           tp.accumulate(a, Matrix::Constant(r, c, adj(0, 0) / n));
                         });
}

Var row_sum(Var a) {
  Index c = a.cols();
  Matrix out = a.value().rowwise().sum();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.replicate(1, c));
  });
}

Var col_sum(Var a) {
  Index r = a.rows();
  Matrix out = a.value().colwise().sum();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, adj.replicate(r, 1));
  });
}

Var logsumexp_rows(Var a) {
  const Matrix& x = a.value();
  require(x.cols() > 0, "logsumexp_rows: empty rows");
  Vector m = x.rowwise().maxCoeff();
  Matrix shifted = x.colwise() - m;
  Matrix e = shifted.array().exp();
  Vector s = e.rowwise().sum();
  Matrix out = (m.array() + s.array().log()).matrix();
  Matrix softmax = e.array().colwise() / s.array();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    tp.accumulate(a, softmax.array().colwise() * adj.col(0).array());
  });
}

Var pick(Var a, std::span<const int> index) {
  const Matrix& x = a.value();
  require(static_cast<Index>(index.size()) == x.rows(), "pick: index length mismatch");
  Matrix out(x.rows(), 1);
  std::vector<int> idx(index.begin(), index.end());
  for (Index i = 0; i < x.rows(); ++i) {
    require(idx[i] >= 0 && idx[i] < x.cols(), "pick: index out of range");
    out(i, 0) = x(i, idx[i]);
  }
  Index r = x.rows(), c = x.cols();
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    Matrix g = Matrix::Zero(r, c);
    for (Index i = 0; i < r; ++i) g(i, idx[i]) = adj(i, 0);
    tp.accumulate(a, g);
  });
}

Var hconcat(std::span<const Var> parts) {
  require(!parts.empty(), "hconcat: no operands");
  Tape& t = parts.front().tape();
  Index rows = parts.front().rows();
  Index cols = 0;
  std::vector<Index> offsets;
  for (const Var& p : parts) {
    require(p.rows() == rows, "hconcat: row counts differ");
    offsets.push_back(cols);
    cols += p.cols();
  }
  Matrix out(rows, cols);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    out.middleCols(offsets[k], parts[k].cols()) = parts[k].value();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.record(std::move(out), parts, [ps, offsets](Tape& tp, const Matrix& adj) {
    for (std::size_t k = 0; k < ps.size(); ++k) {
      if (tp.needs_grad(ps[k])) tp.accumulate(ps[k], adj.middleCols(offsets[k], ps[k].cols()));
    }
  });
}

Var row(Var a, Index r) {
  require(r >= 0 && r < a.rows(), "row: index out of range");
  Index rows = a.rows(), cols = a.cols();
  Matrix out = a.value().row(r);
  return a.tape().record(std::move(out), {a}, [=](Tape& tp, const Matrix& adj) {
    Matrix g = Matrix::Zero(rows, cols);
    g.row(r) = adj;
    tp.accumulate(a, g);
  });
}

Var lower_triangular(Var off_diag, Var log_diag) {
  const Matrix& off = off_diag.value();
  const Matrix& ld = log_diag.value();
  const Index n = ld.rows();
  require(ld.cols() == 1, "lower_triangular: log_diag must be a column");
  require(off.rows() == n && off.cols() == n, "lower_triangular: off_diag shape mismatch");
  Matrix out = Matrix::Zero(n, n);
  for (Index j = 0; j < n; ++j) {
    out(j, j) = std::exp(ld(j, 0));
    for (Index i = j + 1; i < n; ++i) out(i, j) = off(i, j);
  }
  Vector diag = out.diagonal();
  return off_diag.tape().record(std::move(out), {off_diag, log_diag},
                                [=](Tape& tp, const Matrix& adj) {
                                  if (tp.needs_grad(off_diag)) {
                                    Matrix g = Matrix::Zero(n, n);
                                    for (Index j = 0; j < n; ++j) {
                                      for (Index i = j + 1; i < n; ++i) g(i, j) = adj(i, j);
                                    }
                                    tp.accumulate(off_diag, g);
                                  }
                                  if (tp.needs_grad(log_diag)) {
                                    Matrix g = adj.diagonal().cwiseProduct(diag);
                                    tp.accumulate(log_diag, g);
                                  }
                                });
}

Var lower_triangular_product(Var rows, Var off_diag, Var log_diag) {
  const Matrix& x = rows.value();
  const Matrix& off = off_diag.value();
  const Index n = log_diag.rows();
  require(log_diag.cols() == 1, "lower_triangular_product: log_diag must be a column");
  require(off.rows() == n && off.cols() == n && x.cols() == n,
          "lower_triangular_product: shape mismatch");
  const Vector diag = log_diag.value().col(0).array().exp();
  Matrix out = x * off.triangularView<Eigen::StrictlyLower>();
  out += x * diag.asDiagonal();
  return rows.tape().record(
      std::move(out), {rows, off_diag, log_diag}, [=](Tape& tp, const Matrix& adj) {
        const Matrix& xv = tp.value(rows);
        if (tp.needs_grad(rows)) {
          const Matrix& o = tp.value(off_diag);
          Matrix g = adj * o.triangularView<Eigen::StrictlyLower>().transpose();
          g += adj * diag.asDiagonal();
          tp.accumulate(rows, g);
        }
        if (tp.needs_grad(off_diag) || tp.needs_grad(log_diag)) {
          Matrix g = xv.transpose() * adj;
          if (tp.needs_grad(log_diag)) tp.accumulate(log_diag, g.diagonal().cwiseProduct(diag));
          if (tp.needs_grad(off_diag)) {
            g.triangularView<Eigen::Upper>().setZero();
            tp.accumulate(off_diag, g);
          }
        }
      });
}

Var lower_triangular_sqnorm(Var off_diag, Var log_diag) {
  const Matrix& off = off_diag.value();
  const Index n = log_diag.rows();
  require(log_diag.cols() == 1, "lower_triangular_sqnorm: log_diag must be a column");
  require(off.rows() == n && off.cols() == n, "lower_triangular_sqnorm: shape mismatch");
  double total = log_diag.value().array().exp().square().sum();
  for (Index j = 0; j + 1 < n; ++j) total += off.col(j).tail(n - j - 1).squaredNorm();
  return off_diag.tape().record(
      Matrix::Constant(1, 1, total), {off_diag, log_diag}, [=](Tape& tp, const Matrix& adj) {
        const double a = adj(0, 0);
        if (tp.needs_grad(off_diag)) {
          const Matrix& o = tp.value(off_diag);
          Matrix g = Matrix::Zero(n, n);
          for (Index j = 0; j + 1 < n; ++j) {
            g.col(j).tail(n - j - 1) = 2.0 * a * o.col(j).tail(n - j - 1);
          }
          tp.accumulate(off_diag, g);
        }
        if (tp.needs_grad(log_diag)) {
          tp.accumulate(log_diag, 2.0 * a * (2.0 * tp.value(log_diag).array()).exp().matrix());
        }
      });
}

GradientResult grad(const LossFunction& loss_fn, std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
  Tape tape;
  Var loss = loss_fn(tape);
  tape.backward(loss);
  GradientResult result;
  result.loss = loss.scalar();
  result.gradients.reserve(params.size());
  for (Parameter* p : params) result.gradients.push_back(p->grad);
  return result;
}

double evaluate(const LossFunction& loss_fn) {
  Tape tape;
  return loss_fn(tape).scalar();
}

std::vector<Matrix> finite_diff(const LossFunction& loss_fn, std::span<Parameter* const> params,
                                double eps) {
  require(eps > 0.0, "finite_diff: eps must be positive");
  std::vector<Matrix> out;
  out.reserve(params.size());
  for (Parameter* p : params) {
    Matrix g = Matrix::Zero(p->values.rows(), p->values.cols());
    for (Index k = 0; k < p->values.size(); ++k) {
      double& x = p->values.data()[k];
      const double saved = x;
      x = saved + eps;
      const double up = evaluate(loss_fn);
      x = saved - eps;
      const double down = evaluate(loss_fn);
      x = saved;
      g.data()[k] = (up - down) / (2.0 * eps);
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace vbll::ad
