#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace egtas::ad {

using Matrix = Eigen::MatrixXd;
using IndexMatrix = Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic>;

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
/// order; backward() replays their adjoint rules in reverse.
class Tape {
 public:
  Var constant(Matrix value);
  /// A leaf whose gradient is accumulated by backward().
  Var parameter(Matrix value);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient of the last backward() target; zero-sized if the node needs none.
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool needs_grad(Var v) const { return nodes_[v.id].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(target)/d(target) = 1 for a 1x1 target and propagates.
  void backward(Var target);

  // Used by op implementations.
  using Backward = std::function<void(Tape&, std::size_t self)>;
  Var push(Matrix value, bool needs_grad, Backward backward);
  Matrix& grad_ref(Var v) { return nodes_[v.id].grad; }
  /// Adds `delta` into v's gradient if v needs one.
  void accumulate(Var v, const Matrix& delta);
  template <typename Expr>
  void accumulate_expr(Var v, const Expr& delta) {
    auto& node = nodes_[v.id];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0) node.grad = Matrix::Zero(node.value.rows(), node.value.cols());
    node.grad += delta;
  }
  const Matrix& upstream(std::size_t self) const { return nodes_[self].grad; }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);
/// a * b^T
Var matmul_nt(Tape& t, Var a, Var b);
/// Constant left factor: c * x.
Var left_mul(Tape& t, const Matrix& c, Var x);
Var add(Tape& t, Var a, Var b);
/// Adds a 1 x m row to every row of a.
Var add_row(Tape& t, Var a, Var row);
Var add_const(Tape& t, Var a, const Matrix& c);
Var scale(Tape& t, Var a, double s);
/// Elementwise product with a constant (dropout masks).
Var mul_const(Tape& t, Var a, const Matrix& c);

Var relu(Tape& t, Var a);
Var leaky_relu(Tape& t, Var a, double slope);
/// Exact erf-based GELU.
Var gelu(Tape& t, Var a);

/// Row-wise softmax with row-max subtraction.
Var softmax_rows(Tape& t, Var a);

Var concat_cols(Tape& t, std::span<const Var> parts);
Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count);
/// Gathers rows of `table` by index.
Var gather_rows(Tape& t, Var table, std::span<const int> index);
/// out(i,j) = column(index(i,j)) for a B x 1 column.
Var gather_scalars(Tape& t, Var column, const IndexMatrix& index);
/// out(i,j) = a(i) + b(j) for n x 1 columns.
Var outer_sum(Tape& t, Var a, Var b);
/// out(i,j) = sum_k att(k) * leaky(l(i,k) + r(j,k)).
Var pairwise_leaky_score(Tape& t, Var l, Var r, Var att, double slope);
/// 1 x m mean over rows.
Var mean_rows(Tape& t, Var a);
/// Mean negative log-softmax of the labelled rows.
Var cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const int> rows);
/// Sum of squared differences to a constant target, scaled by `weight`.
Var squared_error(Tape& t, Var pred, const Matrix& target, double weight = 1.0);

}  // namespace egtas::ad
