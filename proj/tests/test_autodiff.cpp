#include <doctest.h>

#include <cmath>
#include <functional>

#include "egtas/autodiff.hpp"
#include "egtas/rng.hpp"

using namespace egtas;
using namespace egtas::ad;

namespace {

using OpFn = std::function<Var(Tape&, const std::vector<Var>&)>;

Matrix random_matrix(int r, int c, SeededRng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-scale, scale);
  return m;
}

/// Reduces op output to a scalar via squared error to a fixed random target.
double reduce(const std::vector<Matrix>& inputs, const OpFn& fn, const Matrix& target,
              std::vector<Matrix>* grads = nullptr) {
  Tape t;
  std::vector<Var> vars;
  for (const auto& m : inputs) vars.push_back(t.parameter(m));
  const Var out = fn(t, vars);
  const Var loss = squared_error(t, out, target);
  if (grads) {
    t.backward(loss);
    grads->clear();
    for (auto v : vars) {
      const Matrix& g = t.grad(v);
      grads->push_back(g.size() ? g : Matrix::Zero(t.value(v).rows(), t.value(v).cols()));
    }
  }
  return t.value(loss)(0, 0);
}

double max_rel_error(std::vector<Matrix> inputs, const OpFn& fn, std::uint64_t seed = 1) {
  SeededRng rng(seed);
  Tape probe;
  std::vector<Var> pv;
  for (const auto& m : inputs) pv.push_back(probe.constant(m));
  const Matrix shape = probe.value(fn(probe, pv));
  const Matrix target = random_matrix(shape.rows(), shape.cols(), rng);
  std::vector<Matrix> grads;
  reduce(inputs, fn, target, &grads);
  double worst = 0.0;
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = reduce(inputs, fn, target);
      inputs[k].data()[i] = orig - h;
      const double down = reduce(inputs, fn, target);
      inputs[k].data()[i] = orig;
      const double fd = (up - down) / (2 * h);
      const double an = grads[k].data()[i];
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    }
  return worst;
}

}  // namespace

TEST_CASE("op gradients match finite differences") {
  SeededRng rng(5);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(4, 2, rng), c = random_matrix(3, 4, rng);
  const Matrix row = random_matrix(1, 4, rng), col = random_matrix(3, 1, rng), col2 = random_matrix(3, 1, rng);
  const Matrix konst = random_matrix(3, 4, rng), left = random_matrix(2, 3, rng);
  const Matrix att = random_matrix(4, 1, rng);

  CHECK(max_rel_error({a, b}, [](Tape& t, auto& v) { return matmul(t, v[0], v[1]); }) < 1e-6);
  CHECK(max_rel_error({a, c}, [](Tape& t, auto& v) { return matmul_nt(t, v[0], v[1]); }) < 1e-6);
  CHECK(max_rel_error({a}, [&](Tape& t, auto& v) { return left_mul(t, left, v[0]); }) < 1e-6);
  CHECK(max_rel_error({a, c}, [](Tape& t, auto& v) { return add(t, v[0], v[1]); }) < 1e-6);
  CHECK(max_rel_error({a, row}, [](Tape& t, auto& v) { return add_row(t, v[0], v[1]); }) < 1e-6);
  CHECK(max_rel_error({a}, [&](Tape& t, auto& v) { return add_const(t, v[0], konst); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return scale(t, v[0], -2.5); }) < 1e-6);
  CHECK(max_rel_error({a}, [&](Tape& t, auto& v) { return mul_const(t, v[0], konst); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return relu(t, v[0]); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return leaky_relu(t, v[0], 0.2); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return gelu(t, v[0]); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return softmax_rows(t, v[0]); }) < 1e-6);
  CHECK(max_rel_error({a, c}, [](Tape& t, auto& v) {
          const Var parts[] = {v[0], v[1], v[0]};
          return concat_cols(t, parts);
        }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return slice_rows(t, v[0], 1, 2); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) {
          const int idx[] = {2, 0, 2, 1};
          return gather_rows(t, v[0], idx);
        }) < 1e-6);
  CHECK(max_rel_error({col}, [](Tape& t, auto& v) {
          IndexMatrix idx(2, 3);
          idx << 0, 1, 2, 2, 2, 0;
          return gather_scalars(t, v[0], idx);
        }) < 1e-6);
  CHECK(max_rel_error({col, col2}, [](Tape& t, auto& v) { return outer_sum(t, v[0], v[1]); }) < 1e-6);
  CHECK(max_rel_error({a, c, att}, [](Tape& t, auto& v) {
          return pairwise_leaky_score(t, v[0], v[1], v[2], 0.2);
        }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) { return mean_rows(t, v[0]); }) < 1e-6);
  CHECK(max_rel_error({a}, [](Tape& t, auto& v) {
          const int labels[] = {1, 3, 0};
          const int rows[] = {0, 2};
          return cross_entropy(t, v[0], labels, rows);
        }) < 1e-6);
}

TEST_CASE("forward values") {
  Tape t;
  Matrix x(1, 3);
  x << 1000.0, 1000.0, 1000.0;
  const Var s = softmax_rows(t, t.constant(x));
  CHECK(t.value(s).allFinite());
  CHECK(t.value(s)(0, 0) == doctest::Approx(1.0 / 3));

  Matrix g(1, 3);
  g << -1.0, 0.0, 1.0;
  const Var ge = gelu(t, t.constant(g));
  CHECK(t.value(ge)(0, 0) == doctest::Approx(-0.158655253931457).epsilon(1e-12));
  CHECK(t.value(ge)(0, 1) == 0.0);
  CHECK(t.value(ge)(0, 2) == doctest::Approx(0.841344746068543).epsilon(1e-12));

  Matrix logits = Matrix::Zero(2, 4);
  const int labels[] = {0, 3};
  const int rows[] = {0, 1};
  const Var ce = cross_entropy(t, t.constant(logits), labels, rows);
  CHECK(t.value(ce)(0, 0) == doctest::Approx(std::log(4.0)));

  Matrix l(2, 1), r(2, 1);
  l << 1.0, 2.0;
  r << 10.0, 20.0;
  const Var o = outer_sum(t, t.constant(l), t.constant(r));
  CHECK(t.value(o)(1, 0) == 12.0);
  CHECK(t.value(o)(0, 1) == 21.0);
}

TEST_CASE("constants receive no gradient and reuse accumulates") {
  Tape t;
  const Var c = t.constant(Matrix::Ones(2, 2));
  const Var p = t.parameter(Matrix::Ones(2, 2));
  const Var y = add(t, matmul(t, p, c), p);  // p used twice
  const Var loss = squared_error(t, y, Matrix::Zero(2, 2), 0.5);
  t.backward(loss);
  CHECK_FALSE(t.needs_grad(c));
  CHECK(t.grad(c).size() == 0);
  // y = 3 everywhere; dL/dy = 3; dL/dp = dy*c^T + dy = 3*2 + 3
  CHECK(t.grad(p)(0, 0) == doctest::Approx(9.0));
}
