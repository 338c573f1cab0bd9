#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "calibbench/matrix.hpp"

namespace calibbench {

struct ConfidenceRecord {
  double confidence = 0.0;
  bool correct = false;
};

/// One fixed-width reliability bin over (lo, hi]; confidence 0 lands in bin 0.
struct ReliabilityBin {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t count = 0;
  double mean_confidence = 0.0;
  double accuracy = 0.0;
};

enum class Verdict { Overconfident, Underconfident, Calibrated };

const char* verdict_name(Verdict v);

/// All percentages (x100); bins carry raw [0,1] confidences.
struct CalibrationReport {
  double accuracy_pct = 0.0;
  double mean_confidence_pct = 0.0;
  double ece_pct = 0.0;
  double ace_pct = 0.0;
  double mce_pct = 0.0;
  double ece_kde_pct = 0.0;
  std::vector<ReliabilityBin> bins;
  Verdict verdict = Verdict::Calibrated;
  std::size_t n = 0;
};

/// Fixed-width bin index: bin b covers (b/B, (b+1)/B], confidence 0 -> bin 0.
int ece_bin_index(double confidence, int bins);

double ece(const std::vector<ConfidenceRecord>& records, int bins = 10);
double ace(const std::vector<ConfidenceRecord>& records, int bins = 10);
double mce(const std::vector<ConfidenceRecord>& records, int bins = 10);

/// Nadaraya-Watson accuracy-given-confidence with a Gaussian kernel; the
/// default bandwidth is Silverman's factor clamped to [0.05, 0.3].
double ece_kde(const std::vector<ConfidenceRecord>& records,
               std::optional<double> bandwidth = std::nullopt);

std::vector<ReliabilityBin> reliability_data(const std::vector<ConfidenceRecord>& records,
                                             int bins = 10);

struct MisclassificationHistogram {
  std::vector<double> fractions;  // per-bin share of all errors; sums to 1
  bool has_errors = false;        // false -> all-zero sentinel
};

MisclassificationHistogram misclassification_histogram(
    const std::vector<ConfidenceRecord>& records, int bins = 10);

Verdict verdict(double accuracy_pct, double mean_confidence_pct, double tolerance_pp = 1.0);

/// Minimizes held-out NLL of softmax(logits / T) over T in [0.05, 20] by
/// golden-section search (bracket width 1e-4). Never changes argmax.
double fit_temperature(const DenseMatrix& logits, const std::vector<int>& labels);

double nll_at_temperature(const DenseMatrix& logits, const std::vector<int>& labels, double t);

CalibrationReport make_report(const std::vector<ConfidenceRecord>& records, int bins = 10,
                              double tolerance_pp = 1.0);

}  // namespace calibbench
