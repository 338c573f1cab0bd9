#include "calibbench/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

#include "calibbench/kernels.hpp"

namespace calibbench {

namespace {

void check_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) +
                                "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
}

}  // namespace

Var Tape::push(DenseMatrix value, bool needs_grad,
               std::function<void(Tape&, const Node&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) {
    n.grad = DenseMatrix(n.value.rows(), n.value.cols());
    n.backprop = std::move(backprop);
  }
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Tape::Node& Tape::node_at(Var v) { return nodes_[v.id]; }
const Tape::Node& Tape::node_at(Var v) const { return nodes_[v.id]; }

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape != this || v.id >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": Var does not belong to this tape");
  }
}

void Tape::note_kink(double distance) {
  min_kink_distance_ = std::min(min_kink_distance_, distance);
}

void Tape::accumulate(std::size_t id, const DenseMatrix& delta) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  kernels::active().axpy(1.0, delta.data(), n.grad.data(), delta.size());
}

Var Tape::constant(DenseMatrix value) { return push(std::move(value), false, nullptr); }

Var Tape::leaf(const DenseMatrix& value) { return push(value, true, nullptr); }

const DenseMatrix& Tape::value(Var v) const {
  check_owned(v, "value");
  return node_at(v).value;
}

const DenseMatrix& Tape::grad(Var v) const {
  check_owned(v, "grad");
  const Node& n = node_at(v);
  if (!n.needs_grad) {
    throw std::invalid_argument("grad: node does not track gradients");
  }
  return n.grad;
}

double Tape::scalar(Var v) const {
  check_owned(v, "scalar");
  const DenseMatrix& m = node_at(v).value;
  if (m.rows() != 1 || m.cols() != 1) {
    throw std::invalid_argument("scalar: node is not 1x1");
  }
  return m.at(0, 0);
}

void Tape::backward(Var output) {
  check_owned(output, "backward");
  if (backward_done_) {
    throw std::logic_error("backward: tape already differentiated");
  }
  backward_done_ = true;
  Node& out = node_at(output);
  if (out.value.rows() != 1 || out.value.cols() != 1) {
    throw std::invalid_argument("backward: output must be a 1x1 scalar node");
  }
  if (!out.needs_grad) return;  // constant graph: all leaf grads are zero
  out.grad.at(0, 0) = 1.0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.needs_grad && n.backprop) n.backprop(*this, n);
  }
}

Var Tape::add(Var a, Var b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const DenseMatrix& av = node_at(a).value;
  const DenseMatrix& bv = node_at(b).value;
  check_same_shape(av, bv, "add");
  DenseMatrix out(av.rows(), av.cols());
  kernels::active().vadd(av.data(), bv.data(), out.data(), out.size());
  bool ng = node_at(a).needs_grad || node_at(b).needs_grad;
  std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), ng, [ai, bi](Tape& t, const Node& n) {
    t.accumulate(ai, n.grad);
    t.accumulate(bi, n.grad);
  });
}

Var Tape::sub(Var a, Var b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const DenseMatrix& av = node_at(a).value;
  const DenseMatrix& bv = node_at(b).value;
  check_same_shape(av, bv, "sub");
  DenseMatrix out(av.rows(), av.cols());
  kernels::active().vsub(av.data(), bv.data(), out.data(), out.size());
  bool ng = node_at(a).needs_grad || node_at(b).needs_grad;
  std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), ng, [ai, bi](Tape& t, const Node& n) {
    t.accumulate(ai, n.grad);
    if (t.nodes_[bi].needs_grad) {
      DenseMatrix neg = n.grad;
      kernels::active().scal(-1.0, neg.data(), neg.size());
      t.accumulate(bi, neg);
    }
  });
}

Var Tape::mul(Var a, Var b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  const DenseMatrix& av = node_at(a).value;
  const DenseMatrix& bv = node_at(b).value;
  check_same_shape(av, bv, "mul");
  DenseMatrix out(av.rows(), av.cols());
  kernels::active().vmul(av.data(), bv.data(), out.data(), out.size());
  bool ng = node_at(a).needs_grad || node_at(b).needs_grad;
  std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), ng, [ai, bi](Tape& t, const Node& n) {
    const auto& k = kernels::active();
    if (t.nodes_[ai].needs_grad) {
      DenseMatrix da(n.grad.rows(), n.grad.cols());
      k.vmul(n.grad.data(), t.nodes_[bi].value.data(), da.data(), da.size());
      t.accumulate(ai, da);
    }
    if (t.nodes_[bi].needs_grad) {
      DenseMatrix db(n.grad.rows(), n.grad.cols());
      k.vmul(n.grad.data(), t.nodes_[ai].value.data(), db.data(), db.size());
      t.accumulate(bi, db);
    }
  });
}

Var Tape::scale(Var a, double factor) {
  check_owned(a, "scale");
  DenseMatrix out = node_at(a).value;
  kernels::active().scal(factor, out.data(), out.size());
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai, factor](Tape& t, const Node& n) {
    DenseMatrix da = n.grad;
    kernels::active().scal(factor, da.data(), da.size());
    t.accumulate(ai, da);
  });
}

Var Tape::shift(Var a, double offset) {
  check_owned(a, "shift");
  DenseMatrix out = node_at(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += offset;
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad,
              [ai](Tape& t, const Node& n) { t.accumulate(ai, n.grad); });
}

Var Tape::matmul(Var a, Var b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  const DenseMatrix& av = node_at(a).value;
  const DenseMatrix& bv = node_at(b).value;
  if (av.cols() != bv.rows()) {
    throw std::invalid_argument("matmul: inner dimensions " + std::to_string(av.cols()) + " vs " +
                                std::to_string(bv.rows()));
  }
  DenseMatrix out = mm_nn(av, bv);
  bool ng = node_at(a).needs_grad || node_at(b).needs_grad;
  std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), ng, [ai, bi](Tape& t, const Node& n) {
    if (t.nodes_[ai].needs_grad) t.accumulate(ai, mm_nt(n.grad, t.nodes_[bi].value));
    if (t.nodes_[bi].needs_grad) t.accumulate(bi, mm_tn(t.nodes_[ai].value, n.grad));
  });
}

Var Tape::matmul_nt(Var a, Var b) {
  check_owned(a, "matmul_nt");
  check_owned(b, "matmul_nt");
  const DenseMatrix& av = node_at(a).value;
  const DenseMatrix& bv = node_at(b).value;
  if (av.cols() != bv.cols()) {
    throw std::invalid_argument("matmul_nt: inner dimensions " + std::to_string(av.cols()) +
                                " vs " + std::to_string(bv.cols()));
  }
  DenseMatrix out = mm_nt(av, bv);
  bool ng = node_at(a).needs_grad || node_at(b).needs_grad;
  std::size_t ai = a.id, bi = b.id;
  return push(std::move(out), ng, [ai, bi](Tape& t, const Node& n) {
    if (t.nodes_[ai].needs_grad) t.accumulate(ai, mm_nn(n.grad, t.nodes_[bi].value));
    if (t.nodes_[bi].needs_grad) t.accumulate(bi, mm_tn(n.grad, t.nodes_[ai].value));
  });
}

Var Tape::row_l2_normalize(Var a) {
  check_owned(a, "row_l2_normalize");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  std::vector<double> norms(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double norm = row_l2_norm(av, r);
    if (norm < kNormEpsilon) {
      throw std::domain_error("row_l2_normalize: row " + std::to_string(r) +
                              " has near-zero norm");
    }
    norms[r] = norm;
    const double inv = 1.0 / norm;
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) = av.at(r, c) * inv;
  }
  std::size_t ai = a.id, self = nodes_.size();
  return push(std::move(out), node_at(a).needs_grad,
              [ai, self, norms = std::move(norms)](Tape& t, const Node& n) {
                // dx_r = (g_r - (g_r . y_r) y_r) / ||x_r||
                const DenseMatrix& y = t.nodes_[self].value;
                const auto& k = kernels::active();
                DenseMatrix da(n.grad.rows(), n.grad.cols());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                  double gy = k.dot(n.grad.row_ptr(r), y.row_ptr(r), y.cols());
                  const double inv = 1.0 / norms[r];
                  for (std::size_t c = 0; c < y.cols(); ++c) {
                    da.at(r, c) = (n.grad.at(r, c) - gy * y.at(r, c)) * inv;
                  }
                }
                t.accumulate(ai, da);
              });
}

Var Tape::softmax_rows(Var a, double tau) {
  check_owned(a, "softmax_rows");
  if (!(tau > 0.0)) throw std::invalid_argument("softmax_rows: tau must be positive");
  const DenseMatrix& av = node_at(a).value;
  if (av.rows() == 0 || av.cols() == 0) {
    throw std::invalid_argument("softmax_rows: empty input");
  }
  if (!av.all_finite()) throw std::domain_error("softmax_rows: non-finite logits");
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    // Stable form: exp(tau*s - rowmax(tau*s)).
    double m = tau * av.at(r, 0);
    for (std::size_t c = 1; c < av.cols(); ++c) m = std::max(m, tau * av.at(r, c));
    double denom = 0.0;
    for (std::size_t c = 0; c < av.cols(); ++c) {
      double e = std::exp(tau * av.at(r, c) - m);
      out.at(r, c) = e;
      denom += e;
    }
    const double inv = 1.0 / denom;
    for (std::size_t c = 0; c < av.cols(); ++c) out.at(r, c) *= inv;
  }
  std::size_t ai = a.id, self = nodes_.size();
  return push(std::move(out), node_at(a).needs_grad, [ai, self, tau](Tape& t, const Node& n) {
    // dx = tau * y .* (g - rowwise(g . y))
    const DenseMatrix& y = t.nodes_[self].value;
    const auto& k = kernels::active();
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double gy = k.dot(n.grad.row_ptr(r), y.row_ptr(r), y.cols());
      for (std::size_t c = 0; c < y.cols(); ++c) {
        da.at(r, c) = tau * y.at(r, c) * (n.grad.at(r, c) - gy);
      }
    }
    t.accumulate(ai, da);
  });
}

Var Tape::log(Var a) {
  check_owned(a, "log");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    double x = av.data()[i];
    // the clamp kink sits at kLogFloor; only nearby values are at risk
    if (x < 1e4 * kLogFloor) note_kink(x - kLogFloor);
    out.data()[i] = std::log(std::max(x, kLogFloor));
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      da.data()[i] = x.data()[i] > kLogFloor ? n.grad.data()[i] / x.data()[i] : 0.0;
    }
    t.accumulate(ai, da);
  });
}

Var Tape::exp(Var a) {
  check_owned(a, "exp");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) out.data()[i] = std::exp(av.data()[i]);
  std::size_t ai = a.id, self = nodes_.size();
  return push(std::move(out), node_at(a).needs_grad, [ai, self](Tape& t, const Node& n) {
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    kernels::active().vmul(n.grad.data(), t.nodes_[self].value.data(), da.data(), da.size());
    t.accumulate(ai, da);
  });
}

Var Tape::sqrt(Var a) {
  check_owned(a, "sqrt");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    double x = av.data()[i];
    if (x < 0.0) throw std::domain_error("sqrt: negative input");
    note_kink(x);
    out.data()[i] = std::sqrt(x);
  }
  std::size_t ai = a.id, self = nodes_.size();
  return push(std::move(out), node_at(a).needs_grad, [ai, self](Tape& t, const Node& n) {
    const DenseMatrix& y = t.nodes_[self].value;
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < y.size(); ++i) {
      da.data()[i] = y.data()[i] > 0.0 ? n.grad.data()[i] / (2.0 * y.data()[i]) : 0.0;
    }
    t.accumulate(ai, da);
  });
}

Var Tape::abs(Var a) {
  check_owned(a, "abs");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    // an argument of exactly 0 is the convention point (structural zeros like
    // x - x stay 0 under perturbation); only nearby nonzero values are hazards
    if (av.data()[i] != 0.0) note_kink(std::fabs(av.data()[i]));
    out.data()[i] = std::fabs(av.data()[i]);
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      double s = x.data()[i] > 0.0 ? 1.0 : (x.data()[i] < 0.0 ? -1.0 : 0.0);
      da.data()[i] = s * n.grad.data()[i];
    }
    t.accumulate(ai, da);
  });
}

Var Tape::relu(Var a) {
  check_owned(a, "relu");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (av.data()[i] != 0.0) note_kink(std::fabs(av.data()[i]));
    out.data()[i] = std::max(0.0, av.data()[i]);
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      da.data()[i] = x.data()[i] > 0.0 ? n.grad.data()[i] : 0.0;
    }
    t.accumulate(ai, da);
  });
}

Var Tape::pow_const(Var a, double exponent) {
  check_owned(a, "pow_const");
  const DenseMatrix& av = node_at(a).value;
  const bool kinked = exponent < 1.0 || std::floor(exponent) != exponent;
  DenseMatrix out(av.rows(), av.cols());
  for (std::size_t i = 0; i < av.size(); ++i) {
    if (kinked) note_kink(std::fabs(av.data()[i]));
    out.data()[i] = std::pow(av.data()[i], exponent);
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai, exponent](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(n.grad.rows(), n.grad.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      da.data()[i] = exponent == 0.0
                         ? 0.0
                         : n.grad.data()[i] * exponent * std::pow(x.data()[i], exponent - 1.0);
    }
    t.accumulate(ai, da);
  });
}

Var Tape::sum(Var a) {
  check_owned(a, "sum");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(1, 1);
  out.at(0, 0) = kernels::active().vsum(av.data(), av.size());
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da = DenseMatrix::filled(x.rows(), x.cols(), n.grad.at(0, 0));
    t.accumulate(ai, da);
  });
}

Var Tape::mean(Var a) {
  check_owned(a, "mean");
  const DenseMatrix& av = node_at(a).value;
  if (av.size() == 0) throw std::invalid_argument("mean: empty input");
  DenseMatrix out(1, 1);
  out.at(0, 0) = kernels::active().vsum(av.data(), av.size()) / static_cast<double>(av.size());
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da =
        DenseMatrix::filled(x.rows(), x.cols(), n.grad.at(0, 0) / static_cast<double>(x.size()));
    t.accumulate(ai, da);
  });
}

Var Tape::row_sum(Var a) {
  check_owned(a, "row_sum");
  const DenseMatrix& av = node_at(a).value;
  DenseMatrix out(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    out.at(r, 0) = kernels::active().vsum(av.row_ptr(r), av.cols());
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) da.at(r, c) = n.grad.at(r, 0);
    }
    t.accumulate(ai, da);
  });
}

Var Tape::row_max(Var a) {
  check_owned(a, "row_max");
  const DenseMatrix& av = node_at(a).value;
  if (av.cols() == 0) throw std::invalid_argument("row_max: empty rows");
  DenseMatrix out(av.rows(), 1);
  std::vector<std::size_t> argmax(av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    std::size_t best = 0;
    double second = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 1; c < av.cols(); ++c) {
      if (av.at(r, c) > av.at(r, best)) {
        second = av.at(r, best);
        best = c;
      } else {
        second = std::max(second, av.at(r, c));
      }
    }
    if (av.cols() > 1) note_kink(av.at(r, best) - second);
    argmax[r] = best;
    out.at(r, 0) = av.at(r, best);
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad,
              [ai, argmax = std::move(argmax)](Tape& t, const Node& n) {
                const DenseMatrix& x = t.nodes_[ai].value;
                DenseMatrix da(x.rows(), x.cols());
                for (std::size_t r = 0; r < x.rows(); ++r) {
                  da.at(r, argmax[r]) = n.grad.at(r, 0);
                }
                t.accumulate(ai, da);
              });
}

Var Tape::col_mean(Var a) {
  check_owned(a, "col_mean");
  const DenseMatrix& av = node_at(a).value;
  if (av.rows() == 0) throw std::invalid_argument("col_mean: empty input");
  DenseMatrix out(1, av.cols());
  for (std::size_t r = 0; r < av.rows(); ++r) {
    kernels::active().axpy(1.0, av.row_ptr(r), out.data(), av.cols());
  }
  kernels::active().scal(1.0 / static_cast<double>(av.rows()), out.data(), out.size());
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    const double inv = 1.0 / static_cast<double>(x.rows());
    DenseMatrix da(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      for (std::size_t c = 0; c < x.cols(); ++c) da.at(r, c) = n.grad.at(0, c) * inv;
    }
    t.accumulate(ai, da);
  });
}

Var Tape::broadcast_col(Var a, std::size_t cols) {
  check_owned(a, "broadcast_col");
  const DenseMatrix& av = node_at(a).value;
  if (av.cols() != 1) throw std::invalid_argument("broadcast_col: input must be Nx1");
  if (cols == 0) throw std::invalid_argument("broadcast_col: cols must be positive");
  DenseMatrix out(av.rows(), cols);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.at(r, c) = av.at(r, 0);
  }
  std::size_t ai = a.id;
  return push(std::move(out), node_at(a).needs_grad, [ai](Tape& t, const Node& n) {
    const DenseMatrix& x = t.nodes_[ai].value;
    DenseMatrix da(x.rows(), 1);
    for (std::size_t r = 0; r < n.grad.rows(); ++r) {
      da.at(r, 0) = kernels::active().vsum(n.grad.row_ptr(r), n.grad.cols());
    }
    t.accumulate(ai, da);
  });
}

}  // namespace calibbench
