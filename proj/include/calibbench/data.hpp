#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "calibbench/matrix.hpp"
#include "calibbench/metrics.hpp"
#include "calibbench/model.hpp"

namespace calibbench {

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t feature_dim = 64;
  double overlap = 0.0;  // rho: pairwise cosine between class means
  std::size_t train_per_class = 16;
  std::size_t test_per_class = 200;
  double noise_sigma = 0.5;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;  // empty -> class_0, class_1, ...

  void validate() const;
};

struct Provenance {
  enum class Kind { Synthetic, Imported };
  Kind kind = Kind::Synthetic;
  std::string source;    // spec summary or file path
  std::string checksum;  // fnv1a64 hex of the file, imported datasets only
};

struct EmbeddingDataset {
  DenseMatrix features;  // N x d, unit rows
  std::vector<int> labels;
  std::vector<std::string> class_names;
  Provenance provenance;
  bool renormalized = false;  // loader had to fix row norms

  std::size_t size() const { return labels.size(); }
  std::size_t num_classes() const { return class_names.size(); }
  std::size_t feature_dim() const { return features.cols(); }
};

struct FewShotSplit {
  std::vector<int> train_indices;  // class-major, shots per class
  std::vector<int> test_indices;   // ascending
  std::size_t shots = 0;
  std::uint64_t seed = 0;
};

/// Class means mu_c = sqrt(rho)*g + sqrt(1-rho)*e_c over an orthonormal frame,
/// so every pairwise mean cosine equals rho exactly; samples are normalized
/// mean + sigma*noise. The frame is drawn from the seed unless an external
/// one (e.g. a matched encoder world) is supplied.
EmbeddingDataset generate(const SyntheticSpec& spec);
EmbeddingDataset generate(const SyntheticSpec& spec, const WorldFrame& frame);

FewShotSplit few_shot_split(const EmbeddingDataset& ds, std::size_t shots, std::uint64_t seed);

void save_embeddings(const EmbeddingDataset& ds, const std::string& path);
EmbeddingDataset load_embeddings(const std::string& path);

struct PredictionFile {
  std::vector<ConfidenceRecord> records;
  std::vector<int> labels;
  std::vector<int> predicted;
  DenseMatrix probs;  // 0x0 when the file has no probability columns
};

PredictionFile load_prediction_records(const std::string& path);

/// Parse failure with a 1-based line number baked into the message.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

std::string fnv1a64_hex_of_file(const std::string& path);

}  // namespace calibbench
