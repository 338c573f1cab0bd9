#pragma once

#include <functional>

#include "calibbench/matrix.hpp"
#include "calibbench/tape.hpp"

namespace calibbench {

/// Builds a 1x1 output from a single leaf; evaluated repeatedly by grad_check.
using ScalarGraphFn = std::function<Var(Tape&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  // Smallest kink distance seen over the analytic pass and every perturbed
  // evaluation; callers resample the point when this is too small.
  double min_kink_distance = 0.0;
};

/// Max over entries of |analytic - central difference| / max(1, |analytic|, |numeric|).
/// Throws std::domain_error if any evaluation is non-finite.
double grad_check(const ScalarGraphFn& f, const DenseMatrix& at, double step);

GradCheckResult grad_check_detail(const ScalarGraphFn& f, const DenseMatrix& at, double step);

}  // namespace calibbench
