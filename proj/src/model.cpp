#include "calibbench/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "calibbench/kernels.hpp"

namespace calibbench {

void ClassifierConfig::validate() const {
  if (!(tau > 0.0)) throw std::invalid_argument("ClassifierConfig: tau must be positive");
  if (num_classes < 2) throw std::invalid_argument("ClassifierConfig: K >= 2 required");
  if (context_length < 1) throw std::invalid_argument("ClassifierConfig: M >= 1 required");
  if (token_dim < 1 || feature_dim < 1) {
    throw std::invalid_argument("ClassifierConfig: dimensions must be positive");
  }
}

DenseMatrix orthonormal_rows(Rng& rng, std::size_t n, std::size_t dim) {
  if (n > dim) {
    throw std::invalid_argument("orthonormal_rows: cannot fit " + std::to_string(n) +
                                " orthonormal vectors in dimension " + std::to_string(dim));
  }
  const auto& k = kernels::active();
  DenseMatrix q(n, dim);
  std::vector<double> v(dim);
  for (std::size_t i = 0; i < n; ++i) {
    for (;;) {
      for (std::size_t c = 0; c < dim; ++c) v[c] = rng.normal();
      // two Gram-Schmidt sweeps for numerical orthogonality
      for (int sweep = 0; sweep < 2; ++sweep) {
        for (std::size_t j = 0; j < i; ++j) {
          double proj = k.dot(v.data(), q.row_ptr(j), dim);
          k.axpy(-proj, q.row_ptr(j), v.data(), dim);
        }
      }
      double norm = std::sqrt(k.dot(v.data(), v.data(), dim));
      if (norm > 1e-6) {
        for (std::size_t c = 0; c < dim; ++c) q.at(i, c) = v[c] / norm;
        break;
      }
    }
  }
  return q;
}

PromptBank init_prompts(const ClassifierConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, "model.prompts"));
  DenseMatrix tokens(cfg.num_classes * cfg.context_length, cfg.token_dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) tokens.data()[i] = rng.normal(0.0, 0.02);
  return PromptBank(std::move(tokens), cfg.num_classes, cfg.context_length);
}

FrozenEncoder::FrozenEncoder(DenseMatrix projection, DenseMatrix class_anchors,
                             std::uint64_t seed)
    : projection_(std::move(projection)), class_anchors_(std::move(class_anchors)), seed_(seed) {
  if (class_anchors_.cols() != projection_.rows()) {
    throw std::invalid_argument("FrozenEncoder: anchor dim does not match projection rows");
  }
}

FrozenEncoder FrozenEncoder::create(const ClassifierConfig& cfg, bool matched_anchors) {
  cfg.validate();
  if (cfg.token_dim > cfg.feature_dim) {
    throw std::invalid_argument(
        "FrozenEncoder: token_dim must not exceed feature_dim (orthonormal projection)");
  }
  Rng proj_rng(derive_seed(cfg.seed, "encoder.projection"));
  DenseMatrix projection = orthonormal_rows(proj_rng, cfg.token_dim, cfg.feature_dim);

  // One frame of K+1 orthonormal token-space directions: a shared direction
  // plus one per class. Matched anchors reuse the class directions so the
  // zero-prompt text features line up with a dataset built on the same seed.
  if (cfg.num_classes + 1 > cfg.token_dim) {
    throw std::invalid_argument("FrozenEncoder: K + 1 must not exceed token_dim");
  }
  Rng frame_rng(derive_seed(cfg.seed, "encoder.frame"));
  DenseMatrix frame = orthonormal_rows(frame_rng, cfg.num_classes + 1, cfg.token_dim);

  DenseMatrix anchors(cfg.num_classes, cfg.token_dim);
  if (matched_anchors) {
    for (std::size_t i = 0; i < cfg.num_classes; ++i) {
      for (std::size_t c = 0; c < cfg.token_dim; ++c) anchors.at(i, c) = frame.at(i + 1, c);
    }
  } else {
    Rng anchor_rng(derive_seed(cfg.seed, "encoder.anchors.mismatched"));
    anchors = orthonormal_rows(anchor_rng, cfg.num_classes, cfg.token_dim);
  }

  FrozenEncoder enc(std::move(projection), std::move(anchors), cfg.seed);
  enc.matched_ = matched_anchors;
  DenseMatrix shared(1, cfg.token_dim);
  for (std::size_t c = 0; c < cfg.token_dim; ++c) shared.at(0, c) = frame.at(0, c);
  enc.shared_token_dir_ = std::move(shared);
  return enc;
}

WorldFrame FrozenEncoder::world_frame() const {
  if (!matched_) {
    throw std::logic_error("FrozenEncoder: world_frame only exists for matched anchors");
  }
  WorldFrame frame;
  frame.shared_dir = mm_nn(shared_token_dir_, projection_);
  frame.class_dirs = mm_nn(class_anchors_, projection_);
  return frame;
}

Var encode_text_graph(Tape& tape, Var tokens, const FrozenEncoder& enc, std::size_t num_classes,
                      std::size_t context_length) {
  const DenseMatrix& values = tape.value(tokens);
  if (values.rows() != num_classes * context_length || values.cols() != enc.token_dim()) {
    throw std::invalid_argument("encode_text: prompt bank shape does not match encoder");
  }
  if (enc.num_classes() != num_classes) {
    throw std::invalid_argument("encode_text: class count mismatch with encoder anchors");
  }
  // mean over each class's M tokens as a constant pooling matrix
  DenseMatrix pool(num_classes, num_classes * context_length);
  const double inv_m = 1.0 / static_cast<double>(context_length);
  for (std::size_t i = 0; i < num_classes; ++i) {
    for (std::size_t m = 0; m < context_length; ++m) pool.at(i, i * context_length + m) = inv_m;
  }
  Var pooled = tape.matmul(tape.constant(std::move(pool)), tokens);
  Var shifted = tape.add(pooled, tape.constant(enc.class_anchors()));
  Var projected = tape.matmul(shifted, tape.constant(enc.projection()));
  return tape.row_l2_normalize(projected);
}

DenseMatrix encode_text(const PromptBank& bank, const FrozenEncoder& enc) {
  Tape tape;
  Var tokens = tape.constant(bank.tokens.value);
  Var features = encode_text_graph(tape, tokens, enc, bank.num_classes, bank.context_length);
  return tape.value(features);
}

PredictionBatch classify(const DenseMatrix& image_features, const DenseMatrix& text_features,
                         double tau, const std::vector<int>& labels) {
  if (!(tau > 0.0)) throw std::invalid_argument("classify: tau must be positive");
  if (image_features.cols() != text_features.cols()) {
    throw std::invalid_argument("classify: feature dimensions differ");
  }
  if (text_features.rows() < 2) throw std::invalid_argument("classify: need at least 2 classes");
  if (!approx_unit_rows(image_features, 1e-9) || !approx_unit_rows(text_features, 1e-9)) {
    throw std::invalid_argument("classify: feature rows must be unit-normalized (1e-9)");
  }
  if (!labels.empty() && labels.size() != image_features.rows()) {
    throw std::invalid_argument("classify: label count mismatch");
  }

  PredictionBatch batch;
  batch.logits = mm_nt(image_features, text_features);
  Tape tape;
  batch.probs = tape.value(tape.softmax_rows(tape.constant(batch.logits), tau));

  const std::size_t n = batch.probs.rows();
  const std::size_t k = batch.probs.cols();
  batch.confidence.resize(n);
  batch.predicted.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (batch.probs.at(r, c) > batch.probs.at(r, best)) best = c;
    }
    batch.predicted[r] = static_cast<int>(best);
    batch.confidence[r] = batch.probs.at(r, best);
  }
  batch.labels = labels;
  return batch;
}

TextSimilarityStats text_similarity_stats(const DenseMatrix& text_features) {
  const std::size_t k = text_features.rows();
  if (k < 2) throw std::invalid_argument("text_similarity_stats: K >= 2 required");
  if (!approx_unit_rows(text_features, 1e-9)) {
    throw std::invalid_argument("text_similarity_stats: rows must be unit-normalized");
  }
  TextSimilarityStats stats;
  stats.matrix = mm_nt(text_features, text_features);
  double sum = 0.0;
  double best = -2.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      sum += stats.matrix.at(i, j);
      best = std::max(best, stats.matrix.at(i, j));
    }
  }
  stats.mean_off_diag = sum / static_cast<double>(k * (k - 1));
  stats.max_off_diag = best;
  return stats;
}

}  // namespace calibbench
