#pragma once

#include <cmath>
#include <cstring>
#include <vector>

#include "calibbench/matrix.hpp"
#include "calibbench/rng.hpp"

namespace cbtest {

inline calibbench::DenseMatrix random_matrix(calibbench::Rng& rng, std::size_t rows,
                                             std::size_t cols, double scale = 1.0) {
  calibbench::DenseMatrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

inline calibbench::DenseMatrix random_unit_rows(calibbench::Rng& rng, std::size_t rows,
                                                std::size_t cols) {
  calibbench::DenseMatrix m = random_matrix(rng, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double norm = calibbench::row_l2_norm(m, r);
    for (std::size_t c = 0; c < cols; ++c) m.at(r, c) /= norm;
  }
  return m;
}

// Valid probability rows via a plain softmax, independent of the tape path.
inline calibbench::DenseMatrix random_prob_rows(calibbench::Rng& rng, std::size_t rows,
                                                std::size_t cols) {
  calibbench::DenseMatrix m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    double denom = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      m.at(r, c) = std::exp(rng.normal());
      denom += m.at(r, c);
    }
    for (std::size_t c = 0; c < cols; ++c) m.at(r, c) /= denom;
  }
  return m;
}

inline std::vector<int> random_labels(calibbench::Rng& rng, std::size_t n, int num_classes) {
  std::vector<int> labels(n);
  for (auto& y : labels) y = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
  return labels;
}

inline bool bitwise_equal(const calibbench::DenseMatrix& a, const calibbench::DenseMatrix& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

inline double max_abs_diff(const calibbench::DenseMatrix& a, const calibbench::DenseMatrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
  }
  return m;
}

}  // namespace cbtest
