#pragma once

#include <cstdint>
#include <vector>

#include "calibbench/matrix.hpp"
#include "calibbench/rng.hpp"
#include "calibbench/tape.hpp"

namespace calibbench {

struct ClassifierConfig {
  double tau = 100.0;
  std::size_t num_classes = 2;      // K
  std::size_t context_length = 16;  // M
  std::size_t token_dim = 32;
  std::size_t feature_dim = 64;
  std::uint64_t seed = 0;

  void validate() const;
};

/// The only trainable state: K*M prompt tokens of dimension token_dim,
/// stored as a (K*M) x token_dim parameter (class-major rows).
struct PromptBank {
  Parameter tokens;
  std::size_t num_classes = 0;
  std::size_t context_length = 0;

  PromptBank(DenseMatrix values, std::size_t k, std::size_t m)
      : tokens(std::move(values)), num_classes(k), context_length(m) {}
};

/// Orthonormal set spanning the synthetic world: one shared direction plus
/// one unit direction per class, all in feature space.
struct WorldFrame {
  DenseMatrix shared_dir;  // 1 x feature_dim
  DenseMatrix class_dirs;  // K x feature_dim
};

/// Fixed stand-in for the pretrained text encoder: a projection with
/// orthonormal rows plus one anchor token per class. Immutable after
/// construction; bit-exactly reconstructible from (seed, dims, matched).
class FrozenEncoder {
 public:
  static FrozenEncoder create(const ClassifierConfig& cfg, bool matched_anchors);
  FrozenEncoder(DenseMatrix projection, DenseMatrix class_anchors, std::uint64_t seed);

  const DenseMatrix& projection() const { return projection_; }       // token_dim x feature_dim
  const DenseMatrix& class_anchors() const { return class_anchors_; }  // K x token_dim
  std::uint64_t seed() const { return seed_; }
  bool matched() const { return matched_; }
  std::size_t num_classes() const { return class_anchors_.rows(); }
  std::size_t token_dim() const { return projection_.rows(); }
  std::size_t feature_dim() const { return projection_.cols(); }

  /// Feature-space frame the matched synthetic world is built from.
  WorldFrame world_frame() const;

 private:
  DenseMatrix projection_;
  DenseMatrix class_anchors_;
  DenseMatrix shared_token_dir_;  // 1 x token_dim, matched mode only
  std::uint64_t seed_ = 0;
  bool matched_ = false;
};

struct PredictionBatch {
  DenseMatrix logits;  // N x K cosine similarities
  DenseMatrix probs;   // N x K
  std::vector<double> confidence;
  std::vector<int> predicted;
  std::vector<int> labels;  // empty for unlabeled evaluation
};

struct TextSimilarityStats {
  double mean_off_diag = 0.0;
  double max_off_diag = 0.0;
  DenseMatrix matrix;  // K x K
};

/// Tokens ~ Normal(0, 0.02^2), keyed deterministically by cfg.seed.
PromptBank init_prompts(const ClassifierConfig& cfg);

/// u_i = normalize(A^T (mean_m p_im + c_i)) on the tape; differentiable in the
/// prompt tokens, constant in the encoder.
Var encode_text_graph(Tape& tape, Var tokens, const FrozenEncoder& enc, std::size_t num_classes,
                      std::size_t context_length);

DenseMatrix encode_text(const PromptBank& bank, const FrozenEncoder& enc);

PredictionBatch classify(const DenseMatrix& image_features, const DenseMatrix& text_features,
                         double tau, const std::vector<int>& labels = {});

TextSimilarityStats text_similarity_stats(const DenseMatrix& text_features);

/// Orthonormal rows via Gram-Schmidt over Gaussian draws; requires n <= dim.
DenseMatrix orthonormal_rows(Rng& rng, std::size_t n, std::size_t dim);

}  // namespace calibbench
