#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "dettoy/error.hpp"
#include "dettoy/layers.hpp"
#include "dettoy/nn_ops.hpp"

namespace dettoy::ad {
namespace {

using Fn = std::function<Var(Tape&, Var)>;

Matrix random_matrix(Index r, Index c, unsigned seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937 gen(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = u(gen);
  return m;
}

// Central differences against the taped gradient; returns worst relative error.
double fd_worst(const Matrix& x0, const Fn& f) {
  Tape tape(true);
  const Var x = tape.leaf(x0);
  const Var y = f(tape, x);
  tape.backward(y);
  const Matrix g = *tape.grad(x);
  double worst = 0.0;
  const double h = 1e-6;
  for (Index i = 0; i < x0.size(); ++i) {
    Matrix a = x0, b = x0;
    a.data()[i] += h;
    b.data()[i] -= h;
    Tape ta(false), tb(false);
    const double fa = f(ta, ta.constant(a)).value()(0, 0);
    const double fb = f(tb, tb.constant(b)).value()(0, 0);
    const double fd = (fa - fb) / (2 * h);
    const double denom = std::max(1e-6, std::abs(fd) + std::abs(g.data()[i]));
    worst = std::max(worst, std::abs(fd - g.data()[i]) / denom);
  }
  return worst;
}

// Weighted sum so every output element carries a distinct upstream gradient.
Var probe(Tape& t, Var y) {
  const Matrix w = random_matrix(y.rows(), y.cols(), 99);
  return sum(mul(y, t.constant(w)));
}

constexpr double kTol = 1e-5;

TEST(Autograd, DenseOps) {
  const Matrix x = random_matrix(3, 4, 1);
  const Matrix b = random_matrix(4, 5, 2);
  const Matrix c = random_matrix(3, 4, 3);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) { return probe(t, matmul(v, t.constant(b))); }), kTol);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) { return probe(t, matmul_nt(v, t.constant(c))); }), kTol);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) { return probe(t, matmul_nt(v, v)); }), kTol);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) { return probe(t, mul(v, sub(v, t.constant(c)))); }), kTol);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) { return probe(t, scale(add(v, v), -0.7)); }), kTol);
  const Matrix row = random_matrix(1, 4, 4);
  EXPECT_LT(fd_worst(row, [&](Tape& t, Var v) { return probe(t, add_row(t.constant(x), v)); }), kTol);
  EXPECT_LT(fd_worst(b, [&](Tape& t, Var v) {
              return probe(t, linear(t.constant(x), v, t.constant(random_matrix(1, 5, 5))));
            }),
            kTol);
}

TEST(Autograd, Nonlinearities) {
  const Matrix x = random_matrix(3, 4, 6);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, relu(v)); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, sigmoid(v)); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, abs(v)); }), kTol);
  const Matrix p = random_matrix(3, 4, 7, 0.05, 0.95);
  EXPECT_LT(fd_worst(p, [](Tape& t, Var v) { return probe(t, inverse_sigmoid(v)); }), kTol);
}

TEST(Autograd, RowwiseOps) {
  const Matrix x = random_matrix(3, 6, 8, -2, 2);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, softmax_rows(v)); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, softmax_groups(v, 3)); }), kTol);
  const Matrix gamma = random_matrix(1, 6, 9);
  const Matrix beta = random_matrix(1, 6, 10);
  EXPECT_LT(fd_worst(x, [&](Tape& t, Var v) {
              return probe(t, layer_norm(v, t.constant(gamma), t.constant(beta)));
            }),
            kTol);
  EXPECT_LT(fd_worst(gamma, [&](Tape& t, Var v) {
              return probe(t, layer_norm(t.constant(x), v, t.constant(beta)));
            }),
            kTol);
}

TEST(Autograd, ShapeOps) {
  const Matrix x = random_matrix(4, 5, 11);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, slice_cols(v, 1, 3)); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, slice_rows(v, 2, 2)); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) { return probe(t, gather_rows(v, {3, 0, 3})); }), kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) {
              std::vector<Var> parts{slice_cols(v, 0, 2), v};
              return probe(t, concat_cols(parts));
            }),
            kTol);
  EXPECT_LT(fd_worst(x, [](Tape& t, Var v) {
              std::vector<Var> parts{v, slice_rows(v, 1, 1)};
              return probe(t, concat_rows(parts));
            }),
            kTol);
}

TEST(Autograd, DetachBlocksGradient) {
  Tape t(true);
  const Var x = t.leaf(random_matrix(2, 2, 12));
  const Var y = sum(add(x, detach(x)));
  t.backward(y);
  EXPECT_TRUE(t.grad(x)->isApprox(Matrix::Ones(2, 2)));
}

TEST(Autograd, FusedLosses) {
  const Matrix logits = random_matrix(4, 3, 13, -2, 2);
  const std::vector<int> targets{0, 2, 1, 2};
  const std::vector<double> weights{1.0, 0.1, 1.0, 0.1};
  EXPECT_LT(fd_worst(logits, [&](Tape&, Var v) {
              return weighted_cross_entropy(v, targets, weights);
            }),
            kTol);

  Matrix pred(3, 4), target(3, 4);
  pred << 0.52, 0.47, 0.31, 0.42, 0.33, 0.61, 0.22, 0.13, 0.71, 0.24, 0.52, 0.33;
  target << 0.45, 0.55, 0.2, 0.3, 0.8, 0.8, 0.1, 0.1, 0.6, 0.3, 0.2, 0.4;
  EXPECT_LT(fd_worst(pred, [&](Tape&, Var v) { return sum(giou_loss(v, target)); }), kTol);
}

TEST(Autograd, WeightedCrossEntropyValue) {
  Tape t(false);
  Matrix logits(2, 2);
  logits << 0.0, 0.0, std::log(3.0), 0.0;
  const std::vector<int> targets{0, 0};
  const std::vector<double> weights{1.0, 3.0};
  // Row 0: -ln(1/2); row 1: -ln(3/4); normalized by the weight sum.
  const double expected = (std::log(2.0) + 3.0 * std::log(4.0 / 3.0)) / 4.0;
  EXPECT_NEAR(weighted_cross_entropy(t.constant(logits), targets, weights).value()(0, 0),
              expected, 1e-12);
}

TEST(Autograd, Conv2d) {
  const int hgt = 5, wid = 4, cin = 2, cout = 3, k = 3;
  const Matrix input = random_matrix(hgt * wid, cin, 14);
  const Matrix weight = random_matrix(k * k * cin, cout, 15);
  const Matrix bias = random_matrix(1, cout, 16);
  for (int stride : {1, 2}) {
    EXPECT_LT(fd_worst(input, [&](Tape& t, Var v) {
                return probe(t, conv2d(v, hgt, wid, t.constant(weight), t.constant(bias), k,
                                       stride, 1));
              }),
              kTol);
    EXPECT_LT(fd_worst(weight, [&](Tape& t, Var v) {
                return probe(t, conv2d(t.constant(input), hgt, wid, v, t.constant(bias), k,
                                       stride, 1));
              }),
              kTol);
  }
}

TEST(Autograd, Conv2dIdentityKernel) {
  Tape t(false);
  const Matrix input = random_matrix(9, 1, 17);
  Matrix weight = Matrix::Zero(9, 1);
  weight(4, 0) = 1.0;
  const Var out = conv2d(t.constant(input), 3, 3, t.constant(weight),
                         t.constant(Matrix::Zero(1, 1)), 3, 1, 1);
  EXPECT_TRUE(out.value().isApprox(input));
  EXPECT_EQ(conv_out_size(64, 3, 2, 1), 32);
}

TEST(Autograd, DeformableSample) {
  const std::vector<LevelShape> levels{{4, 4, 0}, {2, 2, 16}};
  const int heads = 2, points = 2;
  const Index nq = 3, d = 4;
  const Index samples = heads * 2 * points;
  const Matrix value = random_matrix(20, d, 18);
  const Matrix loc = random_matrix(nq, 2 * samples, 19, 0.13, 0.87);
  const Matrix w = random_matrix(nq, samples, 20, 0.1, 1.0);
  EXPECT_LT(fd_worst(value, [&](Tape& t, Var v) {
              return probe(t, deformable_sample(v, levels, t.constant(loc), t.constant(w),
                                                heads, points));
            }),
            kTol);
  EXPECT_LT(fd_worst(loc, [&](Tape& t, Var v) {
              return probe(t, deformable_sample(t.constant(value), levels, v, t.constant(w),
                                                heads, points));
            }),
            kTol);
  EXPECT_LT(fd_worst(w, [&](Tape& t, Var v) {
              return probe(t, deformable_sample(t.constant(value), levels, t.constant(loc), v,
                                                heads, points));
            }),
            kTol);
}

TEST(Bilinear, CentreAndCornerCells) {
  Matrix v(4, 1);
  v << 1, 2, 3, 4;
  const LevelShape lv{2, 2, 0};
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 0.5, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 0.25, 0.25), 1.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 0.75, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 0.25, 0.75), 3.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 0.75, 0.75), 4.0);
  // Outside the grid clamps to the border cell.
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, -1.0, -1.0), 1.0);
  EXPECT_DOUBLE_EQ(bilinear_sample(v, lv, 0, 2.0, 2.0), 4.0);
}

TEST(Autograd, ConstantsCarryNoGradient) {
  Tape t(true);
  const Var c = t.constant(Matrix::Ones(2, 2));
  const Var x = t.leaf(Matrix::Ones(2, 2));
  t.backward(sum(mul(c, x)));
  EXPECT_EQ(t.grad(c), nullptr);
  ASSERT_NE(t.grad(x), nullptr);
}

TEST(Autograd, ShapeMismatchThrows) {
  Tape t(false);
  const Var a = t.constant(Matrix::Ones(2, 3));
  const Var b = t.constant(Matrix::Ones(2, 3));
  EXPECT_THROW(matmul(a, b), InvalidArgument);
  EXPECT_THROW(add(a, t.constant(Matrix::Ones(3, 2))), InvalidArgument);
}

}  // namespace
}  // namespace dettoy::ad
