#include <gtest/gtest.h>

#include <random>

#include "isostruct/autograd.hpp"
#include "isostruct/subspace.hpp"

using namespace isostruct;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

using Builder = std::function<Var(Tape&, std::vector<Var>&)>;

// Scalar probe <op(inputs), R> with a fixed random R so every output entry
// contributes to the gradient.
struct Probe {
  Matrix weights;
  Var reduce(Tape& tape, Var v) {
    if (weights.size() == 0) {
      std::mt19937_64 rng(99);
      weights = random_matrix(v.rows(), v.cols(), rng);
    }
    const Var weighted = ad::row_sum(ad::mul(v, tape.constant(weights)));
    return ad::matmul(tape.constant(Matrix::Ones(1, v.rows())), weighted);
  }
};

double evaluate(const Builder& build, const std::vector<Matrix>& inputs, Probe& probe) {
  Tape tape(false);
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
  return probe.reduce(tape, build(tape, vars)).value()(0, 0);
}

void check_gradients(const Builder& build, std::vector<Matrix> inputs, double tol = 1e-6) {
  Probe probe;
  Tape tape;
  std::vector<Var> vars;
  for (const Matrix& m : inputs) vars.push_back(tape.variable(m));
  const Var out = probe.reduce(tape, build(tape, vars));
  tape.backward(out);
  const double h = 1e-6;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix g = tape.grad(vars[k]);
    ASSERT_EQ(g.rows(), inputs[k].rows());
    ASSERT_EQ(g.cols(), inputs[k].cols());
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k].data()[i];
      inputs[k].data()[i] = saved + h;
      const double up = evaluate(build, inputs, probe);
      inputs[k].data()[i] = saved - h;
      const double down = evaluate(build, inputs, probe);
      inputs[k].data()[i] = saved;
      const double fd = (up - down) / (2.0 * h);
      EXPECT_NEAR(g.data()[i], fd, tol * std::max(1.0, std::abs(fd))) << "input " << k << " entry " << i;
    }
  }
}

}  // namespace

TEST(Autograd, Elementwise) {
  std::mt19937_64 rng(1);
  const Matrix a = random_matrix(3, 4, rng), b = random_matrix(3, 4, rng);
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::add(v[0], v[1]); }, {a, b});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::sub(v[0], v[1]); }, {a, b});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::mul(v[0], v[1]); }, {a, b});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::scale(v[0], -2.5); }, {a});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::add_scalar(v[0], 0.7); }, {a});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::silu(v[0]); }, {random_matrix(3, 4, rng, -4, 4)});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::reciprocal(v[0]); },
                  {random_matrix(3, 4, rng, 0.5, 2.0)});
}

TEST(Autograd, LinearAlgebra) {
  std::mt19937_64 rng(2);
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::matmul(v[0], v[1]); },
                  {random_matrix(3, 5, rng), random_matrix(5, 2, rng)});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::linear(v[0], v[1], v[2]); },
                  {random_matrix(4, 3, rng), random_matrix(3, 6, rng), random_matrix(1, 6, rng)});
  check_gradients(
      [](Tape&, std::vector<Var>& v) {
        const std::vector<Var> parts{v[0], v[1], v[0]};
        return ad::concat_cols(parts);
      },
      {random_matrix(3, 2, rng), random_matrix(3, 4, rng)});
}

TEST(Autograd, RowOperations) {
  std::mt19937_64 rng(3);
  const std::vector<int> idx{2, 0, 2, 1, 3};
  check_gradients([&](Tape&, std::vector<Var>& v) { return ad::gather_rows(v[0], idx); }, {random_matrix(4, 3, rng)});
  check_gradients([&](Tape&, std::vector<Var>& v) { return ad::scatter_add_rows(v[0], idx, 4); },
                  {random_matrix(5, 3, rng)});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::mul_rowwise(v[0], v[1]); },
                  {random_matrix(5, 3, rng), random_matrix(5, 1, rng)});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::row_sum(v[0]); }, {random_matrix(5, 3, rng)});
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::head_scale(v[0], v[1]); },
                  {random_matrix(4, 2, rng), random_matrix(4, 6, rng)});
}

TEST(Autograd, SegmentSoftmax) {
  std::mt19937_64 rng(4);
  const std::vector<int> seg{0, 0, 1, 1, 1, 2};
  check_gradients([&](Tape&, std::vector<Var>& v) { return ad::segment_softmax(v[0], seg, 3); },
                  {random_matrix(6, 2, rng, -3, 3)});

  Tape tape(false);
  Matrix big(6, 1);
  big << 800, 801, -5, 0, 5, 1000;
  const Matrix p = ad::segment_softmax(tape.variable(big), seg, 3).value();
  EXPECT_TRUE(p.allFinite());
  EXPECT_NEAR(p(0, 0) + p(1, 0), 1.0, 1e-12);
  EXPECT_NEAR(p(2, 0) + p(3, 0) + p(4, 0), 1.0, 1e-12);
  EXPECT_DOUBLE_EQ(p(5, 0), 1.0);
}

TEST(Autograd, LayerNormAndSumSquares) {
  std::mt19937_64 rng(5);
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::layer_norm(v[0]); }, {random_matrix(4, 7, rng, -2, 2)},
                  1e-5);
  check_gradients([](Tape&, std::vector<Var>& v) { return ad::sum_squares(v[0]); }, {random_matrix(4, 3, rng)});

  Tape tape(false);
  const Matrix y = ad::layer_norm(tape.variable(random_matrix(3, 16, rng, -5, 5))).value();
  for (Eigen::Index r = 0; r < 3; ++r) {
    EXPECT_NEAR(y.row(r).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.row(r).squaredNorm() / 16.0, 1.0, 1e-4);
  }
}

TEST(Autograd, ProjectZeroCom) {
  std::mt19937_64 rng(6);
  const std::vector<double> masses{1.0, 12.0, 16.0, 14.0};
  const MassWeights w(masses);
  check_gradients([&](Tape&, std::vector<Var>& v) { return ad::project_zero_com(v[0], w); },
                  {random_matrix(4, 3, rng)});
}

TEST(Autograd, SharedSubexpressionsAccumulate) {
  std::mt19937_64 rng(7);
  check_gradients(
      [](Tape&, std::vector<Var>& v) {
        const Var h = ad::silu(ad::matmul(v[0], v[1]));
        return ad::add(ad::mul(h, h), ad::matmul(v[0], v[1]));
      },
      {random_matrix(3, 3, rng), random_matrix(3, 2, rng)});
}

TEST(Autograd, ExternalLeavesAndConstants) {
  std::mt19937_64 rng(8);
  const Matrix w = random_matrix(3, 2, rng);
  const Matrix x = random_matrix(4, 3, rng);
  Tape tape;
  const Var xv = tape.constant(x);
  const Var wv = tape.external(w, true);
  const Var out = ad::sum_squares(ad::matmul(xv, wv));
  tape.backward(out);
  const Matrix expected = 2.0 * x.transpose() * (x * w);
  EXPECT_LT((tape.grad(wv) - expected).norm(), 1e-12 * expected.norm());
  EXPECT_EQ(tape.grad(xv).norm(), 0.0);

  Tape unrelated;
  const Var a = unrelated.variable(Matrix::Ones(2, 2));
  const Var b = unrelated.variable(Matrix::Ones(2, 2));
  unrelated.backward(ad::sum_squares(a));
  EXPECT_EQ(unrelated.grad(b), Matrix::Zero(2, 2));
}
