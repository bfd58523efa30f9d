#include "egtas/autodiff.hpp"

#include <cmath>
#include <numbers>

#include "egtas/error.hpp"

namespace egtas::ad {

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::parameter(Matrix value) { return push(std::move(value), true, nullptr); }

Var Tape::push(Matrix value, bool needs_grad, Backward backward) {
  nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward)});
  return Var{nodes_.size() - 1};
}

void Tape::accumulate(Var v, const Matrix& delta) { accumulate_expr(v, delta); }

void Tape::backward(Var target) {
  if (nodes_[target.id].value.size() != 1) throw InvalidArgument("backward target must be 1x1");
  for (auto& node : nodes_) node.grad.resize(0, 0);
  if (!nodes_[target.id].needs_grad) return;
  nodes_[target.id].grad = Matrix::Ones(1, 1);
  for (std::size_t i = target.id + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.backward && node.needs_grad && node.grad.size() != 0) node.backward(*this, i);
  }
}

namespace {

bool any_grad(const Tape& t, std::initializer_list<Var> vars) {
  for (Var v : vars)
    if (t.needs_grad(v)) return true;
  return false;
}

void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).rows()) throw InvalidArgument("matmul: inner dims differ");
  Matrix out = t.value(a) * t.value(b);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate_expr(a, g * tp.value(b).transpose());
    if (tp.needs_grad(b)) tp.accumulate_expr(b, tp.value(a).transpose() * g);
  });
}

Var matmul_nt(Tape& t, Var a, Var b) {
  if (t.value(a).cols() != t.value(b).cols()) throw InvalidArgument("matmul_nt: inner dims differ");
  Matrix out = t.value(a) * t.value(b).transpose();
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate_expr(a, g * tp.value(b));
    if (tp.needs_grad(b)) tp.accumulate_expr(b, g.transpose() * tp.value(a));
  });
}

Var left_mul(Tape& t, const Matrix& c, Var x) {
  if (c.cols() != t.value(x).rows()) throw InvalidArgument("left_mul: inner dims differ");
  Matrix out = c * t.value(x);
  return t.push(std::move(out), t.needs_grad(x), [c, x](Tape& tp, std::size_t self) {
    tp.accumulate_expr(x, c.transpose() * tp.upstream(self));
  });
}

Var add(Tape& t, Var a, Var b) {
  check_same_shape(t.value(a), t.value(b), "add");
  Matrix out = t.value(a) + t.value(b);
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    tp.accumulate_expr(a, tp.upstream(self));
    tp.accumulate_expr(b, tp.upstream(self));
  });
}

Var add_row(Tape& t, Var a, Var row) {
  const Matrix& r = t.value(row);
  if (r.rows() != 1 || r.cols() != t.value(a).cols()) throw InvalidArgument("add_row: bad row");
  Matrix out = t.value(a).rowwise() + r.row(0);
  return t.push(std::move(out), any_grad(t, {a, row}), [a, row](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    tp.accumulate_expr(a, g);
    if (tp.needs_grad(row)) tp.accumulate_expr(row, g.colwise().sum());
  });
}

Var add_const(Tape& t, Var a, const Matrix& c) {
  check_same_shape(t.value(a), c, "add_const");
  Matrix out = t.value(a) + c;
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    tp.accumulate_expr(a, tp.upstream(self));
  });
}

Var scale(Tape& t, Var a, double s) {
  Matrix out = s * t.value(a);
  return t.push(std::move(out), t.needs_grad(a), [a, s](Tape& tp, std::size_t self) {
    tp.accumulate_expr(a, s * tp.upstream(self));
  });
}

Var mul_const(Tape& t, Var a, const Matrix& c) {
  check_same_shape(t.value(a), c, "mul_const");
  Matrix out = t.value(a).cwiseProduct(c);
  return t.push(std::move(out), t.needs_grad(a), [a, c](Tape& tp, std::size_t self) {
    tp.accumulate_expr(a, tp.upstream(self).cwiseProduct(c));
  });
}

Var relu(Tape& t, Var a) {
  Matrix out = t.value(a).cwiseMax(0.0);
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(a);
    tp.accumulate_expr(a, tp.upstream(self).cwiseProduct(
                              (x.array() > 0.0).cast<double>().matrix()));
  });
}

Var leaky_relu(Tape& t, Var a, double slope) {
  const Matrix& x = t.value(a);
  Matrix out = x.unaryExpr([slope](double v) { return v > 0 ? v : slope * v; });
  return t.push(std::move(out), t.needs_grad(a), [a, slope](Tape& tp, std::size_t self) {
    const Matrix d = tp.value(a).unaryExpr([slope](double v) { return v > 0 ? 1.0 : slope; });
    tp.accumulate_expr(a, tp.upstream(self).cwiseProduct(d));
  });
}

Var gelu(Tape& t, Var a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  Matrix out = t.value(a).unaryExpr(
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); });
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    constexpr double inv_sqrt2pi = 0.39894228040143267794;
    const Matrix d = tp.value(a).unaryExpr([](double v) {
      return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
    });
    tp.accumulate_expr(a, tp.upstream(self).cwiseProduct(d));
  });
}

Var softmax_rows(Tape& t, Var a) {
  const Matrix& x = t.value(a);
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp().matrix();
    out.row(i) /= out.row(i).sum();
  }
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    const Matrix& y = tp.value(Var{self});
    const Matrix& g = tp.upstream(self);
    const Eigen::VectorXd dots = (g.cwiseProduct(y)).rowwise().sum();
    Matrix d = g;
    d.colwise() -= dots;
    tp.accumulate_expr(a, y.cwiseProduct(d));
  });
}

Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw InvalidArgument("concat_cols: no inputs");
  const Eigen::Index rows = t.value(parts[0]).rows();
  Eigen::Index cols = 0;
  bool needs = false;
  for (Var p : parts) {
    if (t.value(p).rows() != rows) throw InvalidArgument("concat_cols: row mismatch");
    cols += t.value(p).cols();
    needs = needs || t.needs_grad(p);
  }
  Matrix out(rows, cols);
  Eigen::Index offset = 0;
  for (Var p : parts) {
    out.middleCols(offset, t.value(p).cols()) = t.value(p);
    offset += t.value(p).cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return t.push(std::move(out), needs, [inputs](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Eigen::Index off = 0;
    for (Var p : inputs) {
      const Eigen::Index c = tp.value(p).cols();
      if (tp.needs_grad(p)) tp.accumulate_expr(p, g.middleCols(off, c));
      off += c;
    }
  });
}

Var slice_rows(Tape& t, Var a, Eigen::Index start, Eigen::Index count) {
  const Matrix& x = t.value(a);
  if (start < 0 || count < 0 || start + count > x.rows()) throw InvalidArgument("slice_rows: range");
  Matrix out = x.middleRows(start, count);
  return t.push(std::move(out), t.needs_grad(a), [a, start, count](Tape& tp, std::size_t self) {
    Matrix d = Matrix::Zero(tp.value(a).rows(), tp.value(a).cols());
    d.middleRows(start, count) = tp.upstream(self);
    tp.accumulate(a, d);
  });
}

Var gather_rows(Tape& t, Var table, std::span<const int> index) {
  const Matrix& tab = t.value(table);
  Matrix out(static_cast<Eigen::Index>(index.size()), tab.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= tab.rows()) throw InvalidArgument("gather_rows: bad index");
    out.row(static_cast<Eigen::Index>(i)) = tab.row(index[i]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return t.push(std::move(out), t.needs_grad(table), [table, idx](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix d = Matrix::Zero(tp.value(table).rows(), tp.value(table).cols());
    for (std::size_t i = 0; i < idx.size(); ++i) d.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
    tp.accumulate(table, d);
  });
}

Var gather_scalars(Tape& t, Var column, const IndexMatrix& index) {
  const Matrix& col = t.value(column);
  if (col.cols() != 1) throw InvalidArgument("gather_scalars: expects a column");
  Matrix out(index.rows(), index.cols());
  for (Eigen::Index i = 0; i < index.rows(); ++i)
    for (Eigen::Index j = 0; j < index.cols(); ++j) {
      const int k = index(i, j);
      if (k < 0 || k >= col.rows()) throw InvalidArgument("gather_scalars: bad index");
      out(i, j) = col(k, 0);
    }
  return t.push(std::move(out), t.needs_grad(column), [column, index](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    Matrix d = Matrix::Zero(tp.value(column).rows(), 1);
    for (Eigen::Index i = 0; i < index.rows(); ++i)
      for (Eigen::Index j = 0; j < index.cols(); ++j) d(index(i, j), 0) += g(i, j);
    tp.accumulate(column, d);
  });
}

Var outer_sum(Tape& t, Var a, Var b) {
  const Matrix& x = t.value(a);
  const Matrix& y = t.value(b);
  if (x.cols() != 1 || y.cols() != 1) throw InvalidArgument("outer_sum: expects columns");
  Matrix out = x * Matrix::Ones(1, y.rows()) + Matrix::Ones(x.rows(), 1) * y.transpose();
  return t.push(std::move(out), any_grad(t, {a, b}), [a, b](Tape& tp, std::size_t self) {
    const Matrix& g = tp.upstream(self);
    if (tp.needs_grad(a)) tp.accumulate_expr(a, g.rowwise().sum());
    if (tp.needs_grad(b)) tp.accumulate_expr(b, g.colwise().sum().transpose());
  });
}

Var pairwise_leaky_score(Tape& t, Var l, Var r, Var att, double slope) {
  const Matrix& lv = t.value(l);
  const Matrix& rv = t.value(r);
  const Matrix& av = t.value(att);
  if (lv.cols() != rv.cols() || av.rows() != lv.cols() || av.cols() != 1) {
    throw InvalidArgument("pairwise_leaky_score: shape mismatch");
  }
  const Eigen::Index n = lv.rows(), m = rv.rows(), k = lv.cols();
  Matrix out(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < k; ++c) {
        const double z = lv(i, c) + rv(j, c);
        s += av(c, 0) * (z > 0 ? z : slope * z);
      }
      out(i, j) = s;
    }
  return t.push(std::move(out), any_grad(t, {l, r, att}),
                [l, r, att, slope](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.upstream(self);
                  const Matrix& lv2 = tp.value(l);
                  const Matrix& rv2 = tp.value(r);
                  const Matrix& av2 = tp.value(att);
                  const Eigen::Index n2 = lv2.rows(), m2 = rv2.rows(), k2 = lv2.cols();
                  Matrix dl = Matrix::Zero(n2, k2), dr = Matrix::Zero(m2, k2);
                  Matrix da = Matrix::Zero(k2, 1);
                  for (Eigen::Index i = 0; i < n2; ++i)
                    for (Eigen::Index j = 0; j < m2; ++j) {
                      const double gij = g(i, j);
                      if (gij == 0.0) continue;
                      for (Eigen::Index c = 0; c < k2; ++c) {
                        const double z = lv2(i, c) + rv2(j, c);
                        const double act = z > 0 ? z : slope * z;
                        const double dz = gij * av2(c, 0) * (z > 0 ? 1.0 : slope);
                        dl(i, c) += dz;
                        dr(j, c) += dz;
                        da(c, 0) += gij * act;
                      }
                    }
                  tp.accumulate(l, dl);
                  tp.accumulate(r, dr);
                  tp.accumulate(att, da);
                });
}

Var mean_rows(Tape& t, Var a) {
  const Matrix& x = t.value(a);
  if (x.rows() == 0) throw InvalidArgument("mean_rows: empty input");
  Matrix out = x.colwise().mean();
  return t.push(std::move(out), t.needs_grad(a), [a](Tape& tp, std::size_t self) {
    const Eigen::Index rows = tp.value(a).rows();
    tp.accumulate_expr(a, Matrix::Ones(rows, 1) * tp.upstream(self) / static_cast<double>(rows));
  });
}

Var cross_entropy(Tape& t, Var logits, std::span<const int> labels, std::span<const int> rows) {
  if (rows.empty()) throw InvalidArgument("cross_entropy: empty mask");
  const Matrix& z = t.value(logits);
  Matrix probs(static_cast<Eigen::Index>(rows.size()), z.cols());
  double loss = 0.0;
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto i = static_cast<Eigen::Index>(rows[r]);
    const double m = z.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (z.row(i).array() - m).exp().matrix();
    const double s = e.sum();
    probs.row(static_cast<Eigen::Index>(r)) = e / s;
    loss -= z(i, labels[rows[r]]) - m - std::log(s);
  }
  loss /= static_cast<double>(rows.size());
  std::vector<int> row_ids(rows.begin(), rows.end());
  std::vector<int> label_ids(labels.begin(), labels.end());
  return t.push(Matrix::Constant(1, 1, loss), t.needs_grad(logits),
                [logits, probs, row_ids, label_ids](Tape& tp, std::size_t self) {
                  const double g = tp.upstream(self)(0, 0) / static_cast<double>(row_ids.size());
                  Matrix d = Matrix::Zero(tp.value(logits).rows(), tp.value(logits).cols());
                  for (std::size_t r = 0; r < row_ids.size(); ++r) {
                    const auto i = static_cast<Eigen::Index>(row_ids[r]);
                    d.row(i) += g * probs.row(static_cast<Eigen::Index>(r));
                    d(i, label_ids[row_ids[r]]) -= g;
                  }
                  tp.accumulate(logits, d);
                });
}

Var squared_error(Tape& t, Var pred, const Matrix& target, double weight) {
  check_same_shape(t.value(pred), target, "squared_error");
  const Matrix diff = t.value(pred) - target;
  return t.push(Matrix::Constant(1, 1, weight * diff.squaredNorm()), t.needs_grad(pred),
                [pred, diff, weight](Tape& tp, std::size_t self) {
                  tp.accumulate_expr(pred, 2.0 * weight * tp.upstream(self)(0, 0) * diff);
                });
}

}  // namespace egtas::ad
