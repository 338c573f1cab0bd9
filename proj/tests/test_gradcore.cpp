#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "calibbench/gradcheck.hpp"
#include "calibbench/matrix.hpp"
#include "calibbench/rng.hpp"
#include "calibbench/tape.hpp"
#include "support.hpp"

using namespace calibbench;

namespace {

constexpr double kStep = 1e-6;

// FD-checks f at random points, resampling any point that lands near a kink.
void check_gradient_at_random_points(const ScalarGraphFn& f, std::size_t rows, std::size_t cols,
                                     int points, double tol, std::uint64_t seed,
                                     double scale = 1.0) {
  Rng rng(seed);
  int accepted = 0;
  int attempts = 0;
  while (accepted < points) {
    REQUIRE(++attempts < points * 50);
    DenseMatrix at = cbtest::random_matrix(rng, rows, cols, scale);
    GradCheckResult r = grad_check_detail(f, at, kStep);
    if (r.min_kink_distance < 1e-3) continue;
    ++accepted;
    CHECK(r.max_rel_error <= tol);
  }
}

}  // namespace

TEST_CASE("matmul identity and analytic examples") {
  Tape t;
  DenseMatrix m = DenseMatrix::from_rows({{1.5, -2.0}, {0.25, 4.0}});
  Var prod = t.matmul(t.constant(DenseMatrix::identity(2)), t.constant(m));
  CHECK(cbtest::bitwise_equal(t.value(prod), m));

  Tape t2;
  Var p2 = t2.matmul(t2.constant(DenseMatrix::from_rows({{1, 2}, {3, 4}})),
                     t2.constant(DenseMatrix::from_rows({{1}, {1}})));
  CHECK(t2.value(p2).at(0, 0) == 3.0);
  CHECK(t2.value(p2).at(1, 0) == 7.0);
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(1);
  DenseMatrix b = cbtest::random_matrix(rng, 4, 2);
  DenseMatrix w = cbtest::random_matrix(rng, 3, 2);
  // d/dA sum(W .* (A*B)), A random 3x4
  ScalarGraphFn f = [&](Tape& t, Var x) {
    return t.sum(t.mul(t.constant(w), t.matmul(x, t.constant(b))));
  };
  DenseMatrix a = cbtest::random_matrix(rng, 3, 4);
  CHECK(grad_check(f, a, kStep) <= 1e-6);

  // and with respect to B
  ScalarGraphFn g = [&](Tape& t, Var x) {
    return t.sum(t.mul(t.constant(w), t.matmul(t.constant(a), x)));
  };
  CHECK(grad_check(g, b, kStep) <= 1e-6);
}

TEST_CASE("row_l2_normalize examples") {
  Tape t;
  Var y = t.row_l2_normalize(t.constant(DenseMatrix::from_rows({{3, 4}})));
  CHECK(t.value(y).at(0, 0) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(t.value(y).at(0, 1) == doctest::Approx(0.8).epsilon(1e-14));

  // already-unit row stays put
  Tape t2;
  DenseMatrix unit = DenseMatrix::from_rows({{0.6, 0.8}});
  Var y2 = t2.row_l2_normalize(t2.constant(unit));
  CHECK(cbtest::max_abs_diff(t2.value(y2), unit) <= 1e-15);

  Tape t3;
  CHECK_THROWS_AS(t3.row_l2_normalize(t3.constant(DenseMatrix(2, 3))), std::domain_error);
}

TEST_CASE("row_l2_normalize gradient on random 4x8") {
  Rng rng(2);
  DenseMatrix w = cbtest::random_matrix(rng, 4, 8);
  ScalarGraphFn f = [&](Tape& t, Var x) {
    return t.sum(t.mul(t.constant(w), t.row_l2_normalize(x)));
  };
  DenseMatrix at = cbtest::random_matrix(rng, 4, 8);
  CHECK(grad_check(f, at, kStep) <= 1e-6);
}

TEST_CASE("softmax_rows values") {
  Tape t;
  Var y = t.softmax_rows(t.constant(DenseMatrix::from_rows({{0, 0}})), 3.7);
  CHECK(t.value(y).at(0, 0) == doctest::Approx(0.5).epsilon(1e-14));

  Tape t2;
  Var y2 = t2.softmax_rows(t2.constant(DenseMatrix::from_rows({{std::log(2.0), 0.0}})), 1.0);
  CHECK(t2.value(y2).at(0, 0) == doctest::Approx(2.0 / 3.0).epsilon(1e-13));
  CHECK(t2.value(y2).at(0, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-13));
}

TEST_CASE("softmax_rows stays finite on huge logits, matches extended precision") {
  Tape t;
  Var y = t.softmax_rows(t.constant(DenseMatrix::from_rows({{1000, 999}})), 1.0);
  // extended-precision oracle: p0 = 1 / (1 + exp(-1))
  long double p0 = 1.0L / (1.0L + std::exp(-1.0L));
  CHECK(std::isfinite(t.value(y).at(0, 0)));
  CHECK(t.value(y).at(0, 0) == doctest::Approx(static_cast<double>(p0)).epsilon(1e-12));
  CHECK(t.value(y).at(0, 1) ==
        doctest::Approx(static_cast<double>(1.0L - p0)).epsilon(1e-12));
}

TEST_CASE("softmax_rows rows sum to one; entries open-interval below saturation") {
  Rng rng(3);
  for (int rep = 0; rep < 25; ++rep) {
    // tau * logit gaps stay < 36, so no entry can round to exactly 0 or 1
    DenseMatrix logits = cbtest::random_matrix(rng, 6, 5, 3.0);
    Tape t;
    const DenseMatrix& probs = t.value(t.softmax_rows(t.constant(logits), 2.0));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        sum += probs.at(r, c);
        CHECK(probs.at(r, c) > 0.0);
        CHECK(probs.at(r, c) < 1.0);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
  // saturated regime (cosine-style logits, tau = 100): still normalized, in [0, 1]
  for (int rep = 0; rep < 10; ++rep) {
    DenseMatrix cosines = cbtest::random_unit_rows(rng, 4, 6);
    Tape t;
    const DenseMatrix& probs = t.value(t.softmax_rows(t.constant(cosines), 100.0));
    for (std::size_t r = 0; r < probs.rows(); ++r) {
      double sum = 0.0;
      for (std::size_t c = 0; c < probs.cols(); ++c) {
        sum += probs.at(r, c);
        CHECK(probs.at(r, c) >= 0.0);
        CHECK(probs.at(r, c) <= 1.0);
      }
      CHECK(std::fabs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("softmax_rows rejects bad inputs") {
  Tape t;
  CHECK_THROWS_AS(t.softmax_rows(t.constant(DenseMatrix::from_rows({{1, 2}})), 0.0),
                  std::invalid_argument);
  DenseMatrix bad(1, 2);
  bad.at(0, 0) = std::numeric_limits<double>::quiet_NaN();
  Tape t2;
  CHECK_THROWS_AS(t2.softmax_rows(t2.constant(bad), 1.0), std::domain_error);
}

TEST_CASE("grad_check on quadratic, softmax-CE, and constant functions") {
  Rng rng(4);
  ScalarGraphFn sum_of_squares = [](Tape& t, Var x) { return t.sum(t.mul(x, x)); };
  CHECK(grad_check(sum_of_squares, cbtest::random_matrix(rng, 3, 3), kStep) <= 1e-8);

  // CE of softmax over random logits, label 0 per row
  ScalarGraphFn ce = [](Tape& t, Var x) {
    DenseMatrix onehot(4, 3);
    for (std::size_t r = 0; r < 4; ++r) onehot.at(r, 0) = 1.0;
    Var probs = t.softmax_rows(x, 1.0);
    return t.scale(t.sum(t.mul(t.constant(onehot), t.log(probs))), -0.25);
  };
  CHECK(grad_check(ce, cbtest::random_matrix(rng, 4, 3), kStep) <= 1e-5);

  ScalarGraphFn constant_fn = [](Tape& t, Var x) {
    return t.sum(t.scale(x, 0.0));
  };
  CHECK(grad_check(constant_fn, cbtest::random_matrix(rng, 2, 2), kStep) == 0.0);
}

TEST_CASE("every primitive passes finite-difference checks at non-kink points") {
  Rng wrng(5);
  DenseMatrix w45 = cbtest::random_matrix(wrng, 4, 5);
  DenseMatrix w41 = cbtest::random_matrix(wrng, 4, 1);
  DenseMatrix w15 = cbtest::random_matrix(wrng, 1, 5);
  DenseMatrix other = cbtest::random_matrix(wrng, 4, 5);

  auto weighted = [&](Var v, Tape& t, const DenseMatrix& w) {
    return t.sum(t.mul(t.constant(w), v));
  };

  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.add(x, t.constant(other)), t, w45); }, 4, 5, 20,
      1e-5, 100);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.sub(x, t.constant(other)), t, w45); }, 4, 5, 20,
      1e-5, 101);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.mul(x, t.constant(other)), t, w45); }, 4, 5, 20,
      1e-5, 102);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.scale(x, -2.5), t, w45); }, 4, 5, 20, 1e-5, 103);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.shift(x, 0.75), t, w45); }, 4, 5, 20, 1e-5, 104);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.row_l2_normalize(x), t, w45); }, 4, 5, 20, 1e-5,
      105);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.softmax_rows(x, 2.0), t, w45); }, 4, 5, 20, 1e-5,
      106);
  // log needs positive inputs: shift well away from the clamp
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.log(t.exp(x)), t, w45); }, 4, 5, 20, 1e-5, 107);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.exp(x), t, w45); }, 4, 5, 20, 1e-5, 108);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.sqrt(t.shift(t.mul(x, x), 0.5)), t, w45); }, 4, 5,
      20, 1e-5, 109);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.abs(x), t, w45); }, 4, 5, 20, 1e-5, 110);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.relu(x), t, w45); }, 4, 5, 20, 1e-5, 111);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.pow_const(t.shift(t.mul(x, x), 0.25), 1.7), t, w45); },
      4, 5, 20, 1e-5, 112);
  check_gradient_at_random_points([&](Tape& t, Var x) { return t.sum(x); }, 4, 5, 20, 1e-5, 113);
  check_gradient_at_random_points([&](Tape& t, Var x) { return t.mean(t.mul(x, x)); }, 4, 5, 20,
                                  1e-5, 114);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.row_sum(x), t, w41); }, 4, 5, 20, 1e-5, 115);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.row_max(x), t, w41); }, 4, 5, 20, 1e-5, 116);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.col_mean(x), t, w15); }, 4, 5, 20, 1e-5, 117);
  check_gradient_at_random_points(
      [&](Tape& t, Var x) { return weighted(t.broadcast_col(x, 5), t, w45); }, 4, 1, 20, 1e-5,
      118);
}

TEST_CASE("matmul_nt gradient including the shared-input S = Z Z^T case") {
  Rng rng(6);
  DenseMatrix w44 = cbtest::random_matrix(rng, 4, 4);
  DenseMatrix other = cbtest::random_matrix(rng, 4, 5);
  ScalarGraphFn f = [&](Tape& t, Var x) {
    return t.sum(t.mul(t.constant(w44), t.matmul_nt(x, t.constant(other))));
  };
  CHECK(grad_check(f, cbtest::random_matrix(rng, 4, 5), kStep) <= 1e-5);

  // both arguments the same node: gradient is (G + G^T) Z
  ScalarGraphFn g = [&](Tape& t, Var x) {
    return t.sum(t.mul(t.constant(w44), t.matmul_nt(x, x)));
  };
  CHECK(grad_check(g, cbtest::random_matrix(rng, 4, 5), kStep) <= 1e-5);
}

TEST_CASE("abs and relu use zero subgradient exactly at zero") {
  DenseMatrix zero(1, 1);
  Tape t;
  Var x = t.leaf(zero);
  Var y = t.sum(t.abs(x));
  t.backward(y);
  CHECK(t.grad(x).at(0, 0) == 0.0);

  Tape t2;
  Var x2 = t2.leaf(zero);
  Var y2 = t2.sum(t2.relu(x2));
  t2.backward(y2);
  CHECK(t2.grad(x2).at(0, 0) == 0.0);
}

TEST_CASE("row_max breaks ties toward the lowest column") {
  DenseMatrix m = DenseMatrix::from_rows({{2.0, 2.0, 1.0}});
  Tape t;
  Var x = t.leaf(m);
  Var y = t.sum(t.row_max(x));
  t.backward(y);
  CHECK(t.grad(x).at(0, 0) == 1.0);
  CHECK(t.grad(x).at(0, 1) == 0.0);
}

TEST_CASE("tape replay is bit-deterministic") {
  Rng rng(8);
  DenseMatrix a = cbtest::random_matrix(rng, 5, 4);
  DenseMatrix b = cbtest::random_matrix(rng, 4, 3);
  auto run = [&](DenseMatrix* grad_out) {
    Tape t;
    Var x = t.leaf(a);
    Var y = t.softmax_rows(t.matmul(x, t.constant(b)), 10.0);
    Var loss = t.mean(t.mul(y, y));
    double v = t.scalar(loss);
    t.backward(loss);
    *grad_out = t.grad(x);
    return v;
  };
  DenseMatrix g1, g2;
  double v1 = run(&g1);
  double v2 = run(&g2);
  CHECK(v1 == v2);
  CHECK(cbtest::bitwise_equal(g1, g2));
}

TEST_CASE("gradients accumulate across fan-out") {
  // y = sum(x) + mean(x): dy/dx = 1 + 1/n
  DenseMatrix a = DenseMatrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
  Tape t;
  Var x = t.leaf(a);
  Var y = t.add(t.sum(x), t.mean(x));
  t.backward(y);
  for (std::size_t i = 0; i < 4; ++i) CHECK(t.grad(x).data()[i] == doctest::Approx(1.25));
}

TEST_CASE("shape errors are reported") {
  Tape t;
  Var a = t.constant(DenseMatrix(2, 3));
  Var b = t.constant(DenseMatrix(2, 4));
  CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.backward(a), std::invalid_argument);
}
