#pragma once

#include <map>
#include <string>
#include <vector>

#include "calibbench/matrix.hpp"
#include "calibbench/model.hpp"
#include "calibbench/tape.hpp"

namespace calibbench {

enum class TaskLoss { CrossEntropy, LabelSmoothing, Focal };
enum class BaselineLoss { None, Mdca, Dca, Mmce, Mbls, LogitNorm };

const char* task_loss_name(TaskLoss t);
const char* baseline_loss_name(BaselineLoss b);

struct LossConfig {
  TaskLoss task = TaskLoss::CrossEntropy;
  double ls_alpha = 0.05;
  double fl_gamma = 3.0;
  double smac_weight = 0.0;
  double smac_alpha = 0.05;
  double as_weight = 0.0;
  BaselineLoss baseline = BaselineLoss::None;
  double baseline_weight = 0.0;
  double mbls_margin = 10.0;
  double mmce_bandwidth = 0.4;
  double logitnorm_tau = 1.0;

  void validate() const;
};

/// Total plus the raw (unweighted) value of every active term, keyed by
/// the term name ("ce"/"ls"/"fl", "smac", "as", baseline name).
struct LossValue {
  double total = 0.0;
  std::map<std::string, double> components;
};

// Graph builders: differentiable forms used by training. The double
// overloads below evaluate the same graphs on a throwaway tape.
Var ce_loss(Tape& t, Var probs, const std::vector<int>& labels);
Var label_smoothing_loss(Tape& t, Var probs, const std::vector<int>& labels, double ls_alpha);
Var focal_loss(Tape& t, Var probs, const std::vector<int>& labels, double fl_gamma);
Var smac_loss(Tape& t, Var probs, const std::vector<int>& labels, double smac_alpha);
Var as_loss(Tape& t, Var text_features);
Var mdca_loss(Tape& t, Var probs, const std::vector<int>& labels);
Var dca_loss(Tape& t, Var probs, const std::vector<int>& labels);
Var mmce_loss(Tape& t, Var probs, const std::vector<int>& labels, double bandwidth);
Var mbls_loss(Tape& t, Var logits, const std::vector<int>& labels, double margin, double weight);
Var logitnorm_loss(Tape& t, Var logits, const std::vector<int>& labels, double logitnorm_tau);

double ce_loss(const DenseMatrix& probs, const std::vector<int>& labels);
double label_smoothing_loss(const DenseMatrix& probs, const std::vector<int>& labels,
                            double ls_alpha);
double focal_loss(const DenseMatrix& probs, const std::vector<int>& labels, double fl_gamma);
double smac_loss(const DenseMatrix& probs, const std::vector<int>& labels, double smac_alpha);
double as_loss(const DenseMatrix& text_features);
double mdca_loss(const DenseMatrix& probs, const std::vector<int>& labels);
double dca_loss(const DenseMatrix& probs, const std::vector<int>& labels);
double mmce_loss(const DenseMatrix& probs, const std::vector<int>& labels, double bandwidth);
double mbls_loss(const DenseMatrix& logits, const std::vector<int>& labels, double margin,
                 double weight);
double logitnorm_loss(const DenseMatrix& logits, const std::vector<int>& labels,
                      double logitnorm_tau);

/// Builds the full training objective on one tape: text features and
/// probabilities come from the model graph, every active term is added with
/// its weight, and gradients accumulate into bank.tokens.grad only. The
/// encoder is constant on the tape (frozen backbone).
LossValue combined_objective(PromptBank& bank, const FrozenEncoder& enc,
                             const DenseMatrix& image_features, const std::vector<int>& labels,
                             const LossConfig& cfg, double tau);

/// Same objective without the backward pass (pure evaluation).
LossValue combined_objective_value(const PromptBank& bank, const FrozenEncoder& enc,
                                   const DenseMatrix& image_features,
                                   const std::vector<int>& labels, const LossConfig& cfg,
                                   double tau);

}  // namespace calibbench
