#include "calibbench/losses.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "calibbench/kernels.hpp"

namespace calibbench {

namespace {

constexpr double kRowSumTol = 1e-9;

void validate_labels(const std::vector<int>& labels, std::size_t n, std::size_t k,
                     const char* op) {
  if (labels.size() != n) {
    throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(n) +
                                " labels, got " + std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw std::invalid_argument(std::string(op) + ": label " + std::to_string(y) +
                                  " out of range [0," + std::to_string(k) + ")");
    }
  }
}

void validate_probs(const DenseMatrix& probs, const char* op) {
  if (probs.rows() == 0 || probs.cols() == 0) {
    throw std::invalid_argument(std::string(op) + ": empty probability matrix");
  }
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < probs.cols(); ++c) sum += probs.at(r, c);
    if (std::fabs(sum - 1.0) > kRowSumTol) {
      throw std::invalid_argument(std::string(op) + ": probability row " + std::to_string(r) +
                                  " sums to " + std::to_string(sum));
    }
  }
}

DenseMatrix one_hot(const std::vector<int>& labels, std::size_t k) {
  DenseMatrix out(labels.size(), k);
  for (std::size_t n = 0; n < labels.size(); ++n) {
    out.at(n, static_cast<std::size_t>(labels[n])) = 1.0;
  }
  return out;
}

std::vector<bool> correctness(const DenseMatrix& probs, const std::vector<int>& labels) {
  std::vector<bool> correct(probs.rows());
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols(); ++c) {
      if (probs.at(r, c) > probs.at(r, best)) best = c;
    }
    correct[r] = static_cast<int>(best) == labels[r];
  }
  return correct;
}

// Cross entropy against an arbitrary constant target distribution.
Var soft_target_ce(Tape& t, Var probs, DenseMatrix targets) {
  const std::size_t n = targets.rows();
  Var picked = t.mul(t.constant(std::move(targets)), t.log(probs));
  return t.scale(t.sum(picked), -1.0 / static_cast<double>(n));
}

double eval_scalar(const std::function<Var(Tape&)>& build) {
  Tape t;
  return t.scalar(build(t));
}

}  // namespace

const char* task_loss_name(TaskLoss t) {
  switch (t) {
    case TaskLoss::CrossEntropy: return "ce";
    case TaskLoss::LabelSmoothing: return "ls";
    case TaskLoss::Focal: return "fl";
  }
  return "ce";
}

const char* baseline_loss_name(BaselineLoss b) {
  switch (b) {
    case BaselineLoss::None: return "none";
    case BaselineLoss::Mdca: return "mdca";
    case BaselineLoss::Dca: return "dca";
    case BaselineLoss::Mmce: return "mmce";
    case BaselineLoss::Mbls: return "mbls";
    case BaselineLoss::LogitNorm: return "logitnorm";
  }
  return "none";
}

void LossConfig::validate() const {
  if (ls_alpha < 0.0 || ls_alpha >= 1.0) {
    throw std::invalid_argument("LossConfig: ls_alpha must lie in [0, 1)");
  }
  if (smac_alpha < 0.0 || smac_alpha >= 1.0) {
    throw std::invalid_argument("LossConfig: smac_alpha must lie in [0, 1)");
  }
  if (fl_gamma < 0.0) throw std::invalid_argument("LossConfig: fl_gamma must be >= 0");
  if (smac_weight < 0.0 || as_weight < 0.0 || baseline_weight < 0.0) {
    throw std::invalid_argument("LossConfig: weights must be >= 0");
  }
  if (mmce_bandwidth <= 0.0) {
    throw std::invalid_argument("LossConfig: mmce_bandwidth must be positive");
  }
  if (mbls_margin < 0.0) throw std::invalid_argument("LossConfig: mbls_margin must be >= 0");
  if (logitnorm_tau <= 0.0) {
    throw std::invalid_argument("LossConfig: logitnorm_tau must be positive");
  }
}

Var ce_loss(Tape& t, Var probs, const std::vector<int>& labels) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "ce_loss");
  validate_labels(labels, p.rows(), p.cols(), "ce_loss");
  return soft_target_ce(t, probs, one_hot(labels, p.cols()));
}

Var label_smoothing_loss(Tape& t, Var probs, const std::vector<int>& labels, double ls_alpha) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "label_smoothing_loss");
  validate_labels(labels, p.rows(), p.cols(), "label_smoothing_loss");
  if (ls_alpha < 0.0 || ls_alpha >= 1.0) {
    throw std::invalid_argument("label_smoothing_loss: alpha must lie in [0, 1)");
  }
  DenseMatrix targets = one_hot(labels, p.cols());
  const double uniform = ls_alpha / static_cast<double>(p.cols());
  for (std::size_t i = 0; i < targets.size(); ++i) {
    targets.data()[i] = (1.0 - ls_alpha) * targets.data()[i] + uniform;
  }
  return soft_target_ce(t, probs, std::move(targets));
}

Var focal_loss(Tape& t, Var probs, const std::vector<int>& labels, double fl_gamma) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "focal_loss");
  validate_labels(labels, p.rows(), p.cols(), "focal_loss");
  if (fl_gamma < 0.0) throw std::invalid_argument("focal_loss: gamma must be >= 0");
  const std::size_t n = p.rows();
  Var true_prob = t.row_sum(t.mul(probs, t.constant(one_hot(labels, p.cols()))));
  Var focus = t.pow_const(t.shift(t.scale(true_prob, -1.0), 1.0), fl_gamma);
  Var nll = t.scale(t.log(true_prob), -1.0);
  return t.scale(t.sum(t.mul(focus, nll)), 1.0 / static_cast<double>(n));
}

Var smac_loss(Tape& t, Var probs, const std::vector<int>& labels, double smac_alpha) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "smac_loss");
  validate_labels(labels, p.rows(), p.cols(), "smac_loss");
  if (smac_alpha < 0.0 || smac_alpha >= 1.0) {
    throw std::invalid_argument("smac_loss: alpha must lie in [0, 1)");
  }
  const std::size_t k = p.cols();
  if (k < 2 && smac_alpha > 0.0) {
    throw std::invalid_argument("smac_loss: K >= 2 required when alpha > 0");
  }
  // smoothed empirical class frequency
  DenseMatrix target(1, k);
  const double n = static_cast<double>(p.rows());
  for (int y : labels) target.at(0, static_cast<std::size_t>(y)) += 1.0 / n;
  if (smac_alpha > 0.0) {
    for (std::size_t c = 0; c < k; ++c) {
      double f = target.at(0, c);
      target.at(0, c) = (1.0 - smac_alpha) * f +
                        smac_alpha * (1.0 - f) / static_cast<double>(k - 1);
    }
  }
  Var gap = t.abs(t.sub(t.col_mean(probs), t.constant(std::move(target))));
  return t.scale(t.sum(gap), 1.0 / static_cast<double>(k));
}

Var as_loss(Tape& t, Var text_features) {
  const DenseMatrix& z = t.value(text_features);
  const std::size_t k = z.rows();
  if (k < 2) throw std::invalid_argument("as_loss: K >= 2 required");
  if (!approx_unit_rows(z, 1e-9)) {
    throw std::invalid_argument("as_loss: text features must be unit rows");
  }
  // mean off-diagonal cosine: mask out self-similarities
  DenseMatrix mask = DenseMatrix::filled(k, k, 1.0);
  for (std::size_t i = 0; i < k; ++i) mask.at(i, i) = 0.0;
  Var sim = t.matmul_nt(text_features, text_features);
  Var off_diag = t.mul(sim, t.constant(std::move(mask)));
  return t.scale(t.sum(off_diag), 1.0 / static_cast<double>(k * (k - 1)));
}

Var mdca_loss(Tape& t, Var probs, const std::vector<int>& labels) {
  return smac_loss(t, probs, labels, 0.0);
}

Var dca_loss(Tape& t, Var probs, const std::vector<int>& labels) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "dca_loss");
  validate_labels(labels, p.rows(), p.cols(), "dca_loss");
  auto correct = correctness(p, labels);
  double accuracy = 0.0;
  for (bool c : correct) accuracy += c ? 1.0 : 0.0;
  accuracy /= static_cast<double>(p.rows());
  Var mean_conf = t.mean(t.row_max(probs));
  return t.abs(t.shift(mean_conf, -accuracy));
}

Var mmce_loss(Tape& t, Var probs, const std::vector<int>& labels, double bandwidth) {
  const DenseMatrix& p = t.value(probs);
  validate_probs(p, "mmce_loss");
  validate_labels(labels, p.rows(), p.cols(), "mmce_loss");
  if (bandwidth <= 0.0) throw std::invalid_argument("mmce_loss: bandwidth must be positive");
  const std::size_t n = p.rows();
  auto correct = correctness(p, labels);
  DenseMatrix correct_col(n, 1);
  for (std::size_t r = 0; r < n; ++r) correct_col.at(r, 0) = correct[r] ? 1.0 : 0.0;

  Var conf = t.row_max(probs);                                  // N x 1
  Var gap = t.sub(conf, t.constant(std::move(correct_col)));    // c_i - a_i
  Var outer = t.matmul_nt(gap, gap);                            // (c-a)(c-a)^T
  // Laplacian kernel on pairwise confidence distances
  Var left = t.broadcast_col(conf, n);
  Var diff = t.sub(left, t.matmul_nt(t.constant(DenseMatrix::filled(n, 1, 1.0)), conf));
  Var kernel = t.exp(t.scale(t.abs(diff), -1.0 / bandwidth));
  Var sq = t.scale(t.sum(t.mul(outer, kernel)), 1.0 / static_cast<double>(n * n));
  return t.sqrt(sq);
}

Var mbls_loss(Tape& t, Var logits, const std::vector<int>& labels, double margin, double weight) {
  const std::size_t n = t.value(logits).rows();
  const std::size_t k = t.value(logits).cols();
  if (n == 0 || k == 0) throw std::invalid_argument("mbls_loss: empty logits");
  validate_labels(labels, n, k, "mbls_loss");
  if (margin < 0.0) throw std::invalid_argument("mbls_loss: margin must be >= 0");
  Var ce = ce_loss(t, t.softmax_rows(logits, 1.0), labels);
  Var top = t.broadcast_col(t.row_max(logits), k);
  Var violation = t.relu(t.shift(t.sub(top, logits), -margin));
  Var penalty = t.scale(t.sum(violation), 1.0 / static_cast<double>(n * k));
  return t.add(ce, t.scale(penalty, weight));
}

Var logitnorm_loss(Tape& t, Var logits, const std::vector<int>& labels, double logitnorm_tau) {
  const DenseMatrix& l = t.value(logits);
  if (l.rows() == 0 || l.cols() == 0) throw std::invalid_argument("logitnorm_loss: empty logits");
  validate_labels(labels, l.rows(), l.cols(), "logitnorm_loss");
  if (logitnorm_tau <= 0.0) throw std::invalid_argument("logitnorm_loss: tau must be positive");
  Var normalized = t.scale(t.row_l2_normalize(logits), 1.0 / logitnorm_tau);
  return ce_loss(t, t.softmax_rows(normalized, 1.0), labels);
}

double ce_loss(const DenseMatrix& probs, const std::vector<int>& labels) {
  return eval_scalar([&](Tape& t) { return ce_loss(t, t.constant(probs), labels); });
}

double label_smoothing_loss(const DenseMatrix& probs, const std::vector<int>& labels,
                            double ls_alpha) {
  return eval_scalar(
      [&](Tape& t) { return label_smoothing_loss(t, t.constant(probs), labels, ls_alpha); });
}

double focal_loss(const DenseMatrix& probs, const std::vector<int>& labels, double fl_gamma) {
  return eval_scalar([&](Tape& t) { return focal_loss(t, t.constant(probs), labels, fl_gamma); });
}

double smac_loss(const DenseMatrix& probs, const std::vector<int>& labels, double smac_alpha) {
  return eval_scalar([&](Tape& t) { return smac_loss(t, t.constant(probs), labels, smac_alpha); });
}

double as_loss(const DenseMatrix& text_features) {
  return eval_scalar([&](Tape& t) { return as_loss(t, t.constant(text_features)); });
}

double mdca_loss(const DenseMatrix& probs, const std::vector<int>& labels) {
  return eval_scalar([&](Tape& t) { return mdca_loss(t, t.constant(probs), labels); });
}

double dca_loss(const DenseMatrix& probs, const std::vector<int>& labels) {
  return eval_scalar([&](Tape& t) { return dca_loss(t, t.constant(probs), labels); });
}

double mmce_loss(const DenseMatrix& probs, const std::vector<int>& labels, double bandwidth) {
  return eval_scalar(
      [&](Tape& t) { return mmce_loss(t, t.constant(probs), labels, bandwidth); });
}

double mbls_loss(const DenseMatrix& logits, const std::vector<int>& labels, double margin,
                 double weight) {
  return eval_scalar(
      [&](Tape& t) { return mbls_loss(t, t.constant(logits), labels, margin, weight); });
}

double logitnorm_loss(const DenseMatrix& logits, const std::vector<int>& labels,
                      double logitnorm_tau) {
  return eval_scalar(
      [&](Tape& t) { return logitnorm_loss(t, t.constant(logits), labels, logitnorm_tau); });
}

namespace {

struct ObjectiveGraph {
  Var total;
  Var tokens;
  LossValue value;
};

ObjectiveGraph build_objective(Tape& t, const DenseMatrix& token_values, std::size_t num_classes,
                               std::size_t context_length, const FrozenEncoder& enc,
                               const DenseMatrix& image_features, const std::vector<int>& labels,
                               const LossConfig& cfg, double tau, bool as_leaf) {
  cfg.validate();
  if (!(tau > 0.0)) throw std::invalid_argument("combined_objective: tau must be positive");
  if (!approx_unit_rows(image_features, 1e-9)) {
    throw std::invalid_argument("combined_objective: image features must be unit rows");
  }
  validate_labels(labels, image_features.rows(), num_classes, "combined_objective");

  ObjectiveGraph g{{}, {}, {}};
  g.tokens = as_leaf ? t.leaf(token_values) : t.constant(token_values);
  Var text = encode_text_graph(t, g.tokens, enc, num_classes, context_length);
  Var cosines = t.matmul_nt(t.constant(image_features), text);
  Var probs = t.softmax_rows(cosines, tau);

  Var task{};
  switch (cfg.task) {
    case TaskLoss::CrossEntropy: task = ce_loss(t, probs, labels); break;
    case TaskLoss::LabelSmoothing:
      task = label_smoothing_loss(t, probs, labels, cfg.ls_alpha);
      break;
    case TaskLoss::Focal: task = focal_loss(t, probs, labels, cfg.fl_gamma); break;
  }
  g.value.components[task_loss_name(cfg.task)] = t.scalar(task);
  Var total = task;

  if (cfg.smac_weight > 0.0) {
    Var smac = smac_loss(t, probs, labels, cfg.smac_alpha);
    g.value.components["smac"] = t.scalar(smac);
    total = t.add(total, t.scale(smac, cfg.smac_weight));
  }
  if (cfg.as_weight > 0.0) {
    Var as = as_loss(t, text);
    g.value.components["as"] = t.scalar(as);
    total = t.add(total, t.scale(as, cfg.as_weight));
  }
  if (cfg.baseline != BaselineLoss::None && cfg.baseline_weight > 0.0) {
    Var baseline{};
    switch (cfg.baseline) {
      case BaselineLoss::Mdca: baseline = mdca_loss(t, probs, labels); break;
      case BaselineLoss::Dca: baseline = dca_loss(t, probs, labels); break;
      case BaselineLoss::Mmce: baseline = mmce_loss(t, probs, labels, cfg.mmce_bandwidth); break;
      case BaselineLoss::Mbls: {
        // Margin penalty on the temperature-scaled logits; the spec'd MbLS
        // cross-entropy term is already the task loss here.
        Var scaled = t.scale(cosines, tau);
        Var top = t.broadcast_col(t.row_max(scaled), num_classes);
        Var violation = t.relu(t.shift(t.sub(top, scaled), -cfg.mbls_margin));
        baseline = t.scale(t.sum(violation),
                           1.0 / static_cast<double>(image_features.rows() * num_classes));
        break;
      }
      case BaselineLoss::LogitNorm: {
        Var scaled = t.scale(cosines, tau);
        baseline = logitnorm_loss(t, scaled, labels, cfg.logitnorm_tau);
        break;
      }
      case BaselineLoss::None: break;
    }
    g.value.components[baseline_loss_name(cfg.baseline)] = t.scalar(baseline);
    total = t.add(total, t.scale(baseline, cfg.baseline_weight));
  }

  g.total = total;
  g.value.total = t.scalar(total);
  return g;
}

}  // namespace

LossValue combined_objective(PromptBank& bank, const FrozenEncoder& enc,
                             const DenseMatrix& image_features, const std::vector<int>& labels,
                             const LossConfig& cfg, double tau) {
  Tape t;
  ObjectiveGraph g = build_objective(t, bank.tokens.value, bank.num_classes, bank.context_length,
                                     enc, image_features, labels, cfg, tau, true);
  t.backward(g.total);
  const DenseMatrix& grad = t.grad(g.tokens);
  kernels::active().axpy(1.0, grad.data(), bank.tokens.grad.data(), grad.size());
  return g.value;
}

LossValue combined_objective_value(const PromptBank& bank, const FrozenEncoder& enc,
                                   const DenseMatrix& image_features,
                                   const std::vector<int>& labels, const LossConfig& cfg,
                                   double tau) {
  Tape t;
  ObjectiveGraph g = build_objective(t, bank.tokens.value, bank.num_classes, bank.context_length,
                                     enc, image_features, labels, cfg, tau, false);
  return g.value;
}

}  // namespace calibbench
