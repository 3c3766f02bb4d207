#include "persona/autodiff.hpp"

#include "gradcheck.hpp"

#include <doctest.h>

#include <random>

using namespace persona;
using namespace persona::ad;
using testsupport::gradient_check;
using testsupport::random_matrix;

namespace {

std::mt19937_64 g_rng(2024);

// Loss scaffold: mean squared distance of the op output to a fixed random
// target, so every output entry receives a distinct gradient.
Matrix target_for(Eigen::Index rows, Eigen::Index cols) {
  std::mt19937_64 rng(99);
  return random_matrix(rows, cols, rng);
}

}  // namespace

TEST_CASE("backward on a composite expression matches finite differences for every op") {
  // Exercises matmul, matmul_nt, add, sub, add_rowvec, scale, softmax, gelu,
  // layer norm, vcat, hcat, cols, mean_rows in one graph.
  std::vector<Matrix> leaves = {
      random_matrix(4, 3, g_rng), random_matrix(3, 5, g_rng), random_matrix(4, 5, g_rng),
      random_matrix(1, 5, g_rng), random_matrix(1, 5, g_rng),  // gain/bias
      random_matrix(2, 5, g_rng),
  };
  auto build = [](Tape& tape, const std::vector<Matrix>& vals) {
    Var a = leaf(tape, vals[0]);
    Var b = leaf(tape, vals[1]);
    Var c = leaf(tape, vals[2]);
    Var gain = leaf(tape, vals[3]);
    Var bias = leaf(tape, vals[4]);
    Var d = leaf(tape, vals[5]);

    Var ab = matmul(a, b);                    // 4x5
    Var normed = layer_norm_rows(ab, gain, bias);
    Var mixed = add(normed, c);
    Var soft = softmax_rows(scale(matmul_nt(mixed, d), 0.7));  // 4x2
    Var glued = hcat({soft, cols(mixed, 1, 2)});               // 4x4
    Var act = gelu(glued);
    Var stacked = vcat({act, sub(act, act)});                  // 8x4
    Var pooled = mean_rows(add_rowvec(stacked, cols(gain, 0, 4)));  // 1x4
    return mse_against(pooled, target_for(1, 4));
  };
  const auto result = gradient_check(build, leaves, 1e-5);
  CHECK(result.checked > 0);
  CHECK(result.max_rel_error < 1e-7);
}

TEST_CASE("matmul gradients are exact against hand formulas") {
  Matrix a = random_matrix(3, 4, g_rng);
  Matrix b = random_matrix(4, 2, g_rng);
  Tape tape;
  Var va = leaf(tape, a);
  Var vb = leaf(tape, b);
  Var prod = matmul(va, vb);
  Var loss = mse_against(prod, Matrix::Zero(3, 2));
  tape.backward(loss.idx);

  const Matrix upstream = 2.0 / 6.0 * (a * b);  // dL/dprod for the zero target
  CHECK((tape.grad(va.idx) - upstream * b.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((tape.grad(vb.idx) - a.transpose() * upstream).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("softmax rows sum to one") {
  Tape tape;
  Var x = leaf(tape, random_matrix(7, 9, g_rng, 3.0));
  Var s = softmax_rows(x);
  for (Eigen::Index r = 0; r < 7; ++r) CHECK(s.value().row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("dropout-style mask multiplication routes gradients through kept cells only") {
  Matrix mask = Matrix::Zero(3, 3);
  mask(0, 0) = 2.0;
  mask(1, 2) = 2.0;
  Tape tape;
  Var x = leaf(tape, random_matrix(3, 3, g_rng));
  Var y = mul_const(x, mask);
  Var loss = mse_against(y, Matrix::Zero(3, 3));
  tape.backward(loss.idx);
  CHECK(tape.grad(x.idx)(0, 1) == 0.0);
  CHECK(tape.grad(x.idx)(2, 2) == 0.0);
  CHECK(tape.grad(x.idx)(0, 0) != 0.0);
}

TEST_CASE("shape mismatches raise errors") {
  Tape tape;
  Var a = leaf(tape, Matrix::Zero(2, 3));
  Var b = leaf(tape, Matrix::Zero(2, 3));
  CHECK_THROWS_AS(matmul(a, b), Error);
  CHECK_THROWS_AS(cols(a, 2, 2), Error);
  CHECK_THROWS_AS(add(a, leaf(tape, Matrix::Zero(3, 2))), Error);
  CHECK_THROWS_AS(mse_against(a, Matrix::Zero(1, 1)), Error);
}

TEST_CASE("leaf gradients accumulate across multiple uses") {
  Tape tape;
  Matrix x(1, 1);
  x(0, 0) = 3.0;
  Var v = leaf(tape, x);
  Var doubled = add(v, v);  // dL/dv gets two contributions
  Var loss = mse_against(doubled, Matrix::Zero(1, 1));
  tape.backward(loss.idx);
  // L = (2x)^2, dL/dx = 8x = 24.
  CHECK(tape.grad(v.idx)(0, 0) == doctest::Approx(24.0));
}
