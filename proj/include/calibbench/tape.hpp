#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <vector>

#include "calibbench/matrix.hpp"

namespace calibbench {

class Tape;

/// Handle to a node on a tape. Valid only as long as its tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;
};

/// A trainable leaf: value plus accumulated gradient of the same shape.
struct Parameter {
  DenseMatrix value;
  DenseMatrix grad;

  explicit Parameter(DenseMatrix v) : value(std::move(v)), grad(value.rows(), value.cols()) {}
  void reset_grad() { grad.fill(0.0); }
};

/// Reverse-mode tape over dense matrices. Nodes are recorded in topological
/// order as operations execute; backward() visits them exactly once in
/// reverse. Single-owner, single-threaded; forward-only use is pure.
///
/// The primitive set is closed: exactly the operations the losses and model
/// need, nothing more. Subgradient conventions: d|x|/dx = 0 at x = 0,
/// d max(0,x)/dx = 0 at x = 0, row_max ties route to the lowest column.
class Tape {
 public:
  static constexpr double kLogFloor = 1e-12;
  static constexpr double kNormEpsilon = 1e-12;

  Var constant(DenseMatrix value);
  Var leaf(const DenseMatrix& value);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);  // elementwise
  Var scale(Var a, double factor);
  Var shift(Var a, double offset);
  Var matmul(Var a, Var b);     // A * B
  Var matmul_nt(Var a, Var b);  // A * B^T
  Var row_l2_normalize(Var a);
  Var softmax_rows(Var a, double tau);
  Var log(Var a);  // ln(max(x, kLogFloor))
  Var exp(Var a);
  Var sqrt(Var a);
  Var abs(Var a);
  Var relu(Var a);
  Var pow_const(Var a, double exponent);
  Var sum(Var a);   // 1x1
  Var mean(Var a);  // 1x1
  Var row_sum(Var a);
  Var row_max(Var a);
  Var col_mean(Var a);
  Var broadcast_col(Var a, std::size_t cols);  // Nx1 -> Nxcols

  const DenseMatrix& value(Var v) const;
  const DenseMatrix& grad(Var v) const;
  double scalar(Var v) const;  // value of a 1x1 node

  /// Seeds d(output)/d(output) = 1 and accumulates into every reachable
  /// leaf's grad buffer. Call once per tape.
  void backward(Var output);

  /// Smallest distance to a non-differentiable point seen while recording
  /// (|x| at abs/relu kinks, x at sqrt(0), top-two gap at row_max, ...).
  /// Infinity when no kinked primitive was evaluated.
  double min_kink_distance() const { return min_kink_distance_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix grad;
    bool needs_grad = false;
    std::function<void(Tape&, const Node&)> backprop;
  };

  Var push(DenseMatrix value, bool needs_grad, std::function<void(Tape&, const Node&)> backprop);
  Node& node_at(Var v);
  const Node& node_at(Var v) const;
  void check_owned(Var v, const char* op) const;
  void note_kink(double distance);
  void accumulate(std::size_t id, const DenseMatrix& delta);

  // deque keeps value()/grad() references stable while new nodes are pushed
  std::deque<Node> nodes_;
  double min_kink_distance_ = std::numeric_limits<double>::infinity();
  bool backward_done_ = false;
};

}  // namespace calibbench
