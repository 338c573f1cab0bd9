#include "calibbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace calibbench {

namespace {

void validate_records(const std::vector<ConfidenceRecord>& records, const char* op) {
  if (records.empty()) {
    throw std::invalid_argument(std::string(op) + ": empty record list");
  }
  for (const auto& r : records) {
    if (!(r.confidence >= 0.0 && r.confidence <= 1.0)) {
      throw std::invalid_argument(std::string(op) + ": confidence out of [0,1]");
    }
  }
}

void validate_bins(int bins, const char* op) {
  if (bins < 1) throw std::invalid_argument(std::string(op) + ": bins must be >= 1");
}

struct BinStats {
  std::size_t count = 0;
  double conf_sum = 0.0;
  std::size_t correct = 0;
};

std::vector<BinStats> fixed_width_bins(const std::vector<ConfidenceRecord>& records, int bins) {
  std::vector<BinStats> stats(static_cast<std::size_t>(bins));
  for (const auto& r : records) {
    BinStats& b = stats[static_cast<std::size_t>(ece_bin_index(r.confidence, bins))];
    b.count += 1;
    b.conf_sum += r.confidence;
    b.correct += r.correct ? 1 : 0;
  }
  return stats;
}

}  // namespace

const char* verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Overconfident: return "Overconfident";
    case Verdict::Underconfident: return "Underconfident";
    case Verdict::Calibrated: return "Calibrated";
  }
  return "Calibrated";
}

int ece_bin_index(double confidence, int bins) {
  if (confidence <= 0.0) return 0;
  int idx = static_cast<int>(std::ceil(confidence * bins)) - 1;
  return std::clamp(idx, 0, bins - 1);
}

double ece(const std::vector<ConfidenceRecord>& records, int bins) {
  validate_records(records, "ece");
  validate_bins(bins, "ece");
  auto stats = fixed_width_bins(records, bins);
  const double n = static_cast<double>(records.size());
  double total = 0.0;
  for (const auto& b : stats) {
    if (b.count == 0) continue;
    double acc = static_cast<double>(b.correct) / static_cast<double>(b.count);
    double conf = b.conf_sum / static_cast<double>(b.count);
    total += (static_cast<double>(b.count) / n) * std::fabs(acc - conf);
  }
  return total;
}

double mce(const std::vector<ConfidenceRecord>& records, int bins) {
  validate_records(records, "mce");
  validate_bins(bins, "mce");
  auto stats = fixed_width_bins(records, bins);
  double worst = 0.0;
  for (const auto& b : stats) {
    if (b.count == 0) continue;
    double acc = static_cast<double>(b.correct) / static_cast<double>(b.count);
    double conf = b.conf_sum / static_cast<double>(b.count);
    worst = std::max(worst, std::fabs(acc - conf));
  }
  return worst;
}

double ace(const std::vector<ConfidenceRecord>& records, int bins) {
  validate_records(records, "ace");
  validate_bins(bins, "ace");
  const std::size_t n = records.size();
  if (n < static_cast<std::size_t>(bins)) {
    throw std::invalid_argument("ace: need at least one record per bin (" + std::to_string(n) +
                                " < " + std::to_string(bins) + ")");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) {
    if (records[i].confidence != records[j].confidence) {
      return records[i].confidence < records[j].confidence;
    }
    return i < j;
  });

  // Equal-mass split: the first (n mod bins) groups take the extra sample.
  const std::size_t base = n / static_cast<std::size_t>(bins);
  const std::size_t extra = n % static_cast<std::size_t>(bins);
  double total = 0.0;
  std::size_t pos = 0;
  for (int b = 0; b < bins; ++b) {
    std::size_t size = base + (static_cast<std::size_t>(b) < extra ? 1 : 0);
    double conf_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < size; ++i) {
      const auto& r = records[order[pos + i]];
      conf_sum += r.confidence;
      correct += r.correct ? 1 : 0;
    }
    pos += size;
    double acc = static_cast<double>(correct) / static_cast<double>(size);
    double conf = conf_sum / static_cast<double>(size);
    total += std::fabs(acc - conf);
  }
  return total / static_cast<double>(bins);
}

double ece_kde(const std::vector<ConfidenceRecord>& records, std::optional<double> bandwidth) {
  validate_records(records, "ece_kde");
  const std::size_t n = records.size();
  if (n < 2) throw std::invalid_argument("ece_kde: need at least 2 records");

  double h;
  if (bandwidth.has_value()) {
    h = *bandwidth;
    if (!(h > 0.0)) throw std::invalid_argument("ece_kde: bandwidth must be positive");
  } else {
    double mean = 0.0;
    for (const auto& r : records) mean += r.confidence;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& r : records) {
      var += (r.confidence - mean) * (r.confidence - mean);
    }
    double sigma = std::sqrt(var / static_cast<double>(n - 1));
    h = sigma == 0.0
            ? 0.05
            : std::clamp(1.06 * sigma * std::pow(static_cast<double>(n), -0.2), 0.05, 0.3);
  }

  const double inv_two_h2 = 1.0 / (2.0 * h * h);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      double d = records[i].confidence - records[j].confidence;
      double w = std::exp(-d * d * inv_two_h2);
      den += w;
      if (records[j].correct) num += w;
    }
    total += std::fabs(num / den - records[i].confidence);
  }
  return total / static_cast<double>(n);
}

std::vector<ReliabilityBin> reliability_data(const std::vector<ConfidenceRecord>& records,
                                             int bins) {
  validate_records(records, "reliability_data");
  validate_bins(bins, "reliability_data");
  auto stats = fixed_width_bins(records, bins);
  std::vector<ReliabilityBin> out(static_cast<std::size_t>(bins));
  for (int b = 0; b < bins; ++b) {
    ReliabilityBin& bin = out[static_cast<std::size_t>(b)];
    bin.lo = static_cast<double>(b) / bins;
    bin.hi = static_cast<double>(b + 1) / bins;
    const BinStats& s = stats[static_cast<std::size_t>(b)];
    bin.count = s.count;
    if (s.count > 0) {
      bin.mean_confidence = s.conf_sum / static_cast<double>(s.count);
      bin.accuracy = static_cast<double>(s.correct) / static_cast<double>(s.count);
    }
  }
  return out;
}

MisclassificationHistogram misclassification_histogram(
    const std::vector<ConfidenceRecord>& records, int bins) {
  validate_records(records, "misclassification_histogram");
  validate_bins(bins, "misclassification_histogram");
  MisclassificationHistogram out;
  out.fractions.assign(static_cast<std::size_t>(bins), 0.0);
  std::size_t errors = 0;
  for (const auto& r : records) {
    if (r.correct) continue;
    out.fractions[static_cast<std::size_t>(ece_bin_index(r.confidence, bins))] += 1.0;
    ++errors;
  }
  if (errors == 0) return out;  // all-zero sentinel, has_errors stays false
  out.has_errors = true;
  for (double& f : out.fractions) f /= static_cast<double>(errors);
  return out;
}

Verdict verdict(double accuracy_pct, double mean_confidence_pct, double tolerance_pp) {
  if (mean_confidence_pct - accuracy_pct > tolerance_pp) return Verdict::Overconfident;
  if (accuracy_pct - mean_confidence_pct > tolerance_pp) return Verdict::Underconfident;
  return Verdict::Calibrated;
}

double nll_at_temperature(const DenseMatrix& logits, const std::vector<int>& labels, double t) {
  const std::size_t n = logits.rows();
  const std::size_t k = logits.cols();
  const double inv_t = 1.0 / t;
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double m = logits.at(r, 0) * inv_t;
    for (std::size_t c = 1; c < k; ++c) m = std::max(m, logits.at(r, c) * inv_t);
    double denom = 0.0;
    for (std::size_t c = 0; c < k; ++c) denom += std::exp(logits.at(r, c) * inv_t - m);
    double p = std::exp(logits.at(r, static_cast<std::size_t>(labels[r])) * inv_t - m) / denom;
    total -= std::log(std::max(p, 1e-12));
  }
  return total / static_cast<double>(n);
}

double fit_temperature(const DenseMatrix& logits, const std::vector<int>& labels) {
  if (logits.rows() == 0) throw std::invalid_argument("fit_temperature: empty logits");
  if (labels.size() != logits.rows()) {
    throw std::invalid_argument("fit_temperature: label count mismatch");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw std::invalid_argument("fit_temperature: label out of range");
    }
  }
  double lo = 0.05, hi = 20.0;
  const double ratio = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = hi - ratio * (hi - lo);
  double d = lo + ratio * (hi - lo);
  double fc = nll_at_temperature(logits, labels, c);
  double fd = nll_at_temperature(logits, labels, d);
  while (hi - lo > 1e-4) {
    if (fc < fd) {
      hi = d;
      d = c;
      fd = fc;
      c = hi - ratio * (hi - lo);
      fc = nll_at_temperature(logits, labels, c);
    } else {
      lo = c;
      c = d;
      fc = fd;
      d = lo + ratio * (hi - lo);
      fd = nll_at_temperature(logits, labels, d);
    }
  }
  return 0.5 * (lo + hi);
}

CalibrationReport make_report(const std::vector<ConfidenceRecord>& records, int bins,
                              double tolerance_pp) {
  validate_records(records, "make_report");
  CalibrationReport report;
  report.n = records.size();
  double conf_sum = 0.0;
  std::size_t correct = 0;
  for (const auto& r : records) {
    conf_sum += r.confidence;
    correct += r.correct ? 1 : 0;
  }
  report.accuracy_pct = 100.0 * static_cast<double>(correct) / static_cast<double>(records.size());
  report.mean_confidence_pct = 100.0 * conf_sum / static_cast<double>(records.size());
  report.ece_pct = 100.0 * ece(records, bins);
  report.mce_pct = 100.0 * mce(records, bins);
  // degrade gracefully on tiny inputs instead of refusing the whole report
  int ace_bins = std::min<int>(bins, static_cast<int>(records.size()));
  report.ace_pct = 100.0 * ace(records, ace_bins);
  report.ece_kde_pct =
      records.size() >= 2
          ? 100.0 * ece_kde(records)
          : std::fabs(report.accuracy_pct - report.mean_confidence_pct);
  report.bins = reliability_data(records, bins);
  report.verdict = verdict(report.accuracy_pct, report.mean_confidence_pct, tolerance_pp);
  return report;
}

}  // namespace calibbench
