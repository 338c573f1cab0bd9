#include "calibbench/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace calibbench {

namespace {

double eval_value(const ScalarGraphFn& f, const DenseMatrix& at, double* kink) {
  Tape tape;
  Var x = tape.leaf(at);
  Var y = f(tape, x);
  double v = tape.scalar(y);
  if (!std::isfinite(v)) throw std::domain_error("grad_check: non-finite function value");
  *kink = std::min(*kink, tape.min_kink_distance());
  return v;
}

}  // namespace

GradCheckResult grad_check_detail(const ScalarGraphFn& f, const DenseMatrix& at, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckResult result;
  result.min_kink_distance = std::numeric_limits<double>::infinity();

  Tape tape;
  Var x = tape.leaf(at);
  Var y = f(tape, x);
  if (!std::isfinite(tape.scalar(y))) {
    throw std::domain_error("grad_check: non-finite function value");
  }
  tape.backward(y);
  DenseMatrix analytic = tape.grad(x);
  result.min_kink_distance = std::min(result.min_kink_distance, tape.min_kink_distance());

  DenseMatrix point = at;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double saved = point.data()[i];
    point.data()[i] = saved + step;
    double fp = eval_value(f, point, &result.min_kink_distance);
    point.data()[i] = saved - step;
    double fm = eval_value(f, point, &result.min_kink_distance);
    point.data()[i] = saved;

    double numeric = (fp - fm) / (2.0 * step);
    double a = analytic.data()[i];
    double err = std::fabs(a - numeric) / std::max({1.0, std::fabs(a), std::fabs(numeric)});
    result.max_rel_error = std::max(result.max_rel_error, err);
  }
  return result;
}

double grad_check(const ScalarGraphFn& f, const DenseMatrix& at, double step) {
  return grad_check_detail(f, at, step).max_rel_error;
}

}  // namespace calibbench
