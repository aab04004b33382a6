#include <cmath>
#include <random>

#include <doctest.h>

#include "consurv/autodiff.hpp"
#include "consurv/error.hpp"

using namespace consurv;
using ad::Matrix;
using ad::Tape;
using ad::Var;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (double& v : m.data()) v = n(rng);
  return m;
}

}  // namespace

TEST_CASE("matmul values") {
  const Matrix a = Matrix::from_rows({{1, 2}, {3, 4}});
  const Matrix b = Matrix::from_rows({{5}, {6}});
  CHECK(ad::matmul(a, b) == Matrix::from_rows({{17}, {39}}));
  const Matrix m = random_matrix(2, 2, 1);
  CHECK(ad::matmul(Matrix::identity(2), m) == m);
  CHECK(ad::matmul(Matrix(2, 2), m) == Matrix(2, 2));
  CHECK_THROWS_AS(ad::matmul(a, Matrix(3, 1)), DimensionError);
}

TEST_CASE("matmul backward") {
  Tape tape;
  const Var a = tape.variable(Matrix::from_rows({{1, 2}, {3, 4}}));
  const Var b = tape.variable(Matrix::from_rows({{5}, {6}}));
  tape.backward(ad::sum(ad::matmul(a, b)));
  // a.grad = g b^T, b.grad = a^T g with g = ones.
  CHECK(a.grad() == Matrix::from_rows({{5, 6}, {5, 6}}));
  CHECK(b.grad() == Matrix::from_rows({{4}, {6}}));
}

TEST_CASE("elementwise") {
  Tape tape;
  const Var zero = tape.variable(Matrix::scalar(0.0));
  const Var s = ad::sigmoid(zero);
  CHECK(s.item() == 0.5);
  tape.backward(s);
  CHECK(zero.grad()[0] == doctest::Approx(0.25).epsilon(1e-15));

  Matrix xs(1, 201);
  for (std::size_t k = 0; k < xs.size(); ++k) xs[k] = -10.0 + 0.1 * static_cast<double>(k);
  const Var x = tape.constant(xs);
  const Matrix back = ad::log(ad::exp(x)).value();
  for (std::size_t k = 0; k < xs.size(); ++k) CHECK(std::abs(back[k] - xs[k]) < 1e-12);

  CHECK_THROWS_AS(ad::log(tape.constant(Matrix::scalar(-1.0))), NumericError);
  CHECK_THROWS_AS(ad::log(tape.constant(Matrix::scalar(std::nan("")))), NumericError);
  CHECK(std::isfinite(ad::log(tape.constant(Matrix::scalar(0.0))).item()));
  CHECK(ad::relu(tape.constant(Matrix::from_rows({{-1, 2}}))).value() == Matrix::from_rows({{0, 2}}));
  CHECK(ad::scale(tape.constant(Matrix::from_rows({{1, 2}})), 3.0).value() ==
        Matrix::from_rows({{3, 6}}));
  CHECK_THROWS_AS(ad::add(tape.constant(Matrix(2, 2)), tape.constant(Matrix(3, 2))),
                  DimensionError);
}

TEST_CASE("reductions") {
  Tape tape;
  CHECK(ad::sum(tape.constant(Matrix::from_rows({{1, 2, 3}}))).item() == 6.0);
  CHECK(ad::logsumexp(tape.constant(Matrix::scalar(-3.5))).item() == -3.5);
  const double big = ad::logsumexp(tape.constant(Matrix::from_rows({{1000, 1000}}))).item();
  CHECK(big == doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-15));
  const Matrix rows = ad::sum(tape.constant(Matrix::from_rows({{1, 2}, {3, 4}})), ad::Axis::cols)
                          .value();
  CHECK(rows == Matrix::from_rows({{3}, {7}}));
  CHECK(ad::mean(tape.constant(Matrix::from_rows({{1, 2}, {3, 6}}))).item() == 3.0);
  CHECK_THROWS_AS(ad::sum(tape.constant(Matrix(0, 0))), DimensionError);
}

TEST_CASE("backward rules") {
  SUBCASE("square") {
    Tape tape;
    const Var x = tape.variable(Matrix::scalar(3.0));
    tape.backward(x * x);
    CHECK(x.grad()[0] == 6.0);
  }
  SUBCASE("fan-out") {
    Tape tape;
    const Var x = tape.variable(Matrix::scalar(3.0));
    tape.backward(x + x);
    CHECK(x.grad()[0] == 2.0);
  }
  SUBCASE("constant path") {
    Tape tape;
    const Var x = tape.variable(Matrix::scalar(3.0));
    const Var c = tape.constant(Matrix::scalar(2.0));
    tape.backward(c * c + 0.0 * c);
    CHECK(x.grad()[0] == 0.0);
  }
  SUBCASE("non-scalar root") {
    Tape tape;
    const Var x = tape.variable(Matrix(2, 1, 1.0));
    CHECK_THROWS_AS(tape.backward(x), DimensionError);
  }
  SUBCASE("shared subexpression equals expanded graph") {
    const Matrix v = random_matrix(3, 2, 7);
    Tape shared;
    const Var a = shared.variable(v);
    const Var e = ad::exp(a);
    shared.backward(ad::sum(e * e + e));
    Tape expanded;
    const Var b = expanded.variable(v);
    expanded.backward(ad::sum(ad::exp(b) * ad::exp(b) + ad::exp(b)));
    for (std::size_t k = 0; k < v.size(); ++k) {
      CHECK(a.grad()[k] == doctest::Approx(b.grad()[k]).epsilon(1e-14));
    }
  }
}

TEST_CASE("grad_check") {
  const Matrix theta = random_matrix(3, 3, 11);
  const ad::Objective quadratic = [](Tape&, Var t) { return ad::sum(t * t) + ad::sum(t); };
  CHECK(ad::grad_check(quadratic, theta) < 1e-9);

  const Matrix x = random_matrix(4, 3, 12);
  const ad::Objective smooth = [&](Tape& tape, Var w) {
    const Var h = ad::tanh(ad::matmul(tape.constant(x), w));
    return ad::logsumexp(ad::sigmoid(h) * h) + ad::sum(ad::normalize_rows(h));
  };
  CHECK(ad::grad_check(smooth, theta) < 1e-6);

  // An op whose backward rule is missing must be caught.
  const ad::Objective wrong = [](Tape& tape, Var t) {
    return ad::sum(tape.record(ad::exp(t).value(), {t.id()}, [](Tape&, std::size_t) {}));
  };
  CHECK(ad::grad_check(wrong, theta) > 1e-2);
}

TEST_CASE("forward determinism") {
  const Matrix x = random_matrix(16, 8, 3);
  auto run = [&] {
    Tape tape;
    const Var v = tape.constant(x);
    return ad::logsumexp(ad::matmul(v, ad::transpose(v)), ad::Axis::cols).value();
  };
  CHECK(run() == run());
}
