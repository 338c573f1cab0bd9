#include "calibbench/matrix.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "calibbench/kernels.hpp"

namespace calibbench {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("DenseMatrix: data length " + std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) + "x" +
                                std::to_string(cols_));
  }
}

DenseMatrix DenseMatrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  std::size_t r = rows.size();
  std::size_t c = r == 0 ? 0 : rows.begin()->size();
  DenseMatrix out(r, c);
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != c) throw std::invalid_argument("DenseMatrix::from_rows: ragged rows");
    std::size_t j = 0;
    for (double v : row) out.at(i, j++) = v;
    ++i;
  }
  return out;
}

DenseMatrix DenseMatrix::identity(std::size_t n) {
  DenseMatrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) out.at(i, i) = 1.0;
  return out;
}

DenseMatrix DenseMatrix::filled(std::size_t rows, std::size_t cols, double value) {
  DenseMatrix out(rows, cols);
  out.fill(value);
  return out;
}

bool DenseMatrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void DenseMatrix::fill(double value) {
  for (double& v : data_) v = value;
}

namespace {

void check_inner(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    throw std::invalid_argument(std::string(op) + ": inner dimensions " + std::to_string(a) +
                                " vs " + std::to_string(b));
  }
}

}  // namespace

DenseMatrix mm_nn(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols(), b.rows(), "mm_nn");
  const auto& k = kernels::active();
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* out_row = out.row_ptr(i);
    for (std::size_t p = 0; p < a.cols(); ++p) {
      k.axpy(a.at(i, p), b.row_ptr(p), out_row, b.cols());
    }
  }
  return out;
}

DenseMatrix mm_nt(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.cols(), b.cols(), "mm_nt");
  const auto& k = kernels::active();
  DenseMatrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out.at(i, j) = k.dot(a.row_ptr(i), b.row_ptr(j), a.cols());
    }
  }
  return out;
}

DenseMatrix mm_tn(const DenseMatrix& a, const DenseMatrix& b) {
  check_inner(a.rows(), b.rows(), "mm_tn");
  const auto& k = kernels::active();
  DenseMatrix out(a.cols(), b.cols());
  for (std::size_t p = 0; p < a.rows(); ++p) {
    const double* b_row = b.row_ptr(p);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      k.axpy(a.at(p, i), b_row, out.row_ptr(i), b.cols());
    }
  }
  return out;
}

DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  }
  return out;
}

double row_l2_norm(const DenseMatrix& a, std::size_t r) {
  const auto& k = kernels::active();
  return std::sqrt(k.dot(a.row_ptr(r), a.row_ptr(r), a.cols()));
}

bool approx_unit_rows(const DenseMatrix& a, double tol) {
  for (std::size_t r = 0; r < a.rows(); ++r) {
    if (std::fabs(row_l2_norm(a, r) - 1.0) > tol) return false;
  }
  return true;
}

}  // namespace calibbench
