#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "calibbench/data.hpp"
#include "calibbench/kernels.hpp"
#include "support.hpp"

using namespace calibbench;

namespace {

SyntheticSpec base_spec() {
  SyntheticSpec spec;
  spec.num_classes = 4;
  spec.feature_dim = 64;
  spec.overlap = 0.5;
  spec.train_per_class = 8;
  spec.test_per_class = 20;
  spec.noise_sigma = 0.4;
  spec.seed = 7;
  return spec;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

// nearest class-mean classifier, the separability yardstick for the rho knob
double nearest_mean_accuracy(const EmbeddingDataset& ds, const FewShotSplit& split) {
  const std::size_t k = ds.num_classes();
  const std::size_t d = ds.feature_dim();
  DenseMatrix means(k, d);
  std::vector<double> counts(k, 0.0);
  for (int idx : split.train_indices) {
    auto r = static_cast<std::size_t>(idx);
    auto c = static_cast<std::size_t>(ds.labels[r]);
    kernels::active().axpy(1.0, ds.features.row_ptr(r), means.row_ptr(c), d);
    counts[c] += 1.0;
  }
  for (std::size_t c = 0; c < k; ++c) {
    kernels::active().scal(1.0 / counts[c], means.row_ptr(c), d);
  }
  std::size_t hits = 0;
  for (int idx : split.test_indices) {
    auto r = static_cast<std::size_t>(idx);
    std::size_t best = 0;
    double best_dot = -1e300;
    for (std::size_t c = 0; c < k; ++c) {
      double dot = kernels::active().dot(ds.features.row_ptr(r), means.row_ptr(c), d);
      if (dot > best_dot) {
        best_dot = dot;
        best = c;
      }
    }
    if (static_cast<int>(best) == ds.labels[r]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(split.test_indices.size());
}

}  // namespace

TEST_CASE("generate: zero overlap and zero noise give exactly the class means") {
  SyntheticSpec spec = base_spec();
  spec.overlap = 0.0;
  spec.noise_sigma = 0.0;
  EmbeddingDataset ds = generate(spec);
  CHECK(ds.size() == 4 * 28);
  CHECK(approx_unit_rows(ds.features, 1e-9));

  // all samples of one class are identical; distinct classes are orthogonal
  for (std::size_t c = 0; c < 4; ++c) {
    const double* first = ds.features.row_ptr(c * 28);
    for (std::size_t i = 1; i < 28; ++i) {
      double dot = kernels::active().dot(first, ds.features.row_ptr(c * 28 + i), 64);
      CHECK(std::fabs(dot - 1.0) <= 1e-9);
    }
  }
  for (std::size_t a = 0; a < 4; ++a) {
    for (std::size_t b = a + 1; b < 4; ++b) {
      double dot =
          kernels::active().dot(ds.features.row_ptr(a * 28), ds.features.row_ptr(b * 28), 64);
      CHECK(std::fabs(dot) <= 1e-9);
    }
  }
}

TEST_CASE("generate: determinism and the rho = 0.5 mean-cosine check") {
  SyntheticSpec spec = base_spec();
  EmbeddingDataset a = generate(spec);
  EmbeddingDataset b = generate(spec);
  CHECK(cbtest::bitwise_equal(a.features, b.features));
  CHECK(a.labels == b.labels);

  spec.noise_sigma = 0.0;
  EmbeddingDataset means = generate(spec);
  double sum = 0.0;
  int pairs = 0;
  for (std::size_t x = 0; x < 4; ++x) {
    for (std::size_t y = x + 1; y < 4; ++y) {
      sum += kernels::active().dot(means.features.row_ptr(x * 28),
                                   means.features.row_ptr(y * 28), 64);
      ++pairs;
    }
  }
  double mean_cos = sum / pairs;
  CHECK(mean_cos >= 0.45);
  CHECK(mean_cos <= 0.55);
}

TEST_CASE("generate: dimension guard") {
  SyntheticSpec spec = base_spec();
  spec.num_classes = 64;
  spec.feature_dim = 64;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
  spec.num_classes = 1;
  CHECK_THROWS_AS(generate(spec), std::invalid_argument);
}

TEST_CASE("separability decreases as overlap grows") {
  double prev = 2.0;
  for (double rho : {0.0, 0.3, 0.6, 0.9}) {
    double acc_sum = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      SyntheticSpec spec = base_spec();
      spec.overlap = rho;
      spec.noise_sigma = 0.8;
      spec.seed = seed;
      EmbeddingDataset ds = generate(spec);
      FewShotSplit split = few_shot_split(ds, 8, seed);
      acc_sum += nearest_mean_accuracy(ds, split);
    }
    double mean_acc = acc_sum / 5.0;
    CHECK(mean_acc <= prev + 1e-12);
    prev = mean_acc;
  }
}

TEST_CASE("few_shot_split: counts, disjointness, determinism") {
  SyntheticSpec spec = base_spec();
  spec.num_classes = 2;
  EmbeddingDataset ds = generate(spec);
  FewShotSplit split = few_shot_split(ds, 8, 3);
  CHECK(split.train_indices.size() == 16);
  CHECK(split.train_indices.size() + split.test_indices.size() == ds.size());

  std::set<int> train(split.train_indices.begin(), split.train_indices.end());
  for (int idx : split.test_indices) CHECK(train.count(idx) == 0);
  std::set<int> all(split.train_indices.begin(), split.train_indices.end());
  all.insert(split.test_indices.begin(), split.test_indices.end());
  CHECK(all.size() == ds.size());

  FewShotSplit again = few_shot_split(ds, 8, 3);
  CHECK(again.train_indices == split.train_indices);
  CHECK(again.test_indices == split.test_indices);
  FewShotSplit other = few_shot_split(ds, 8, 4);
  CHECK(other.train_indices != split.train_indices);

  // 8 per class exactly
  for (std::size_t c = 0; c < 2; ++c) {
    std::size_t count = 0;
    for (int idx : split.train_indices) {
      if (ds.labels[static_cast<std::size_t>(idx)] == static_cast<int>(c)) ++count;
    }
    CHECK(count == 8);
  }

  CHECK_THROWS_AS(few_shot_split(ds, 1000, 0), std::runtime_error);
}

TEST_CASE("embeddings round-trip through CSV") {
  SyntheticSpec spec = base_spec();
  spec.train_per_class = 3;
  spec.test_per_class = 4;
  EmbeddingDataset ds = generate(spec);
  auto path = temp_file("cb_roundtrip.csv");
  save_embeddings(ds, path.string());
  EmbeddingDataset loaded = load_embeddings(path.string());
  CHECK(loaded.size() == ds.size());
  CHECK(loaded.class_names == ds.class_names);
  CHECK(loaded.labels == ds.labels);
  CHECK(cbtest::max_abs_diff(loaded.features, ds.features) <= 1e-9);
  CHECK_FALSE(loaded.renormalized);
  CHECK(loaded.provenance.kind == Provenance::Kind::Imported);
  CHECK(loaded.provenance.checksum.size() == 16);
  std::filesystem::remove(path);
}

TEST_CASE("load_embeddings rejects malformed input with line numbers") {
  auto path = temp_file("cb_bad.csv");

  write_file(path, "#classes: a,b\nlabel,f0,f1\n");
  CHECK_THROWS_AS(load_embeddings(path.string()), ParseError);

  write_file(path, "#classes: a,b\nlabel,f0,f1\n0,0.6,0.8\n1,NaN,1.0\n");
  try {
    load_embeddings(path.string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 4);
    CHECK(std::string(e.what()).find(":4:") != std::string::npos);
  }

  write_file(path, "#classes: a,b\nlabel,f0,f1\n2,0.6,0.8\n");
  try {
    load_embeddings(path.string());
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }

  write_file(path, "nonsense\nlabel,f0\n0,1\n");
  CHECK_THROWS_AS(load_embeddings(path.string()), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("load_embeddings renormalizes off-unit rows and flags it") {
  auto path = temp_file("cb_renorm.csv");
  write_file(path, "#classes: a,b\nlabel,f0,f1\n0,3,4\n1,0,1\n");
  EmbeddingDataset ds = load_embeddings(path.string());
  CHECK(ds.renormalized);
  CHECK(approx_unit_rows(ds.features, 1e-12));
  CHECK(ds.features.at(0, 0) == doctest::Approx(0.6));
  std::filesystem::remove(path);
}

TEST_CASE("prediction records load and validate") {
  auto path = temp_file("cb_pred.csv");
  write_file(path, "label,predicted,confidence\n0,0,0.93\n");
  PredictionFile one = load_prediction_records(path.string());
  CHECK(one.records.size() == 1);
  CHECK(one.records[0].correct);
  CHECK(one.records[0].confidence == doctest::Approx(0.93));
  CHECK(one.probs.rows() == 0);

  write_file(path,
             "label,predicted,confidence,p0,p1\n0,1,0.6,0.4,0.6\n1,1,0.55,0.45,0.55\n");
  PredictionFile full = load_prediction_records(path.string());
  CHECK(full.records.size() == 2);
  CHECK_FALSE(full.records[0].correct);
  CHECK(full.records[1].correct);
  CHECK(full.probs.rows() == 2);
  CHECK(full.probs.at(0, 1) == doctest::Approx(0.6));

  // probability rows must sum to one
  write_file(path, "label,predicted,confidence,p0,p1\n0,0,0.6,0.49,0.49\n");
  CHECK_THROWS_AS(load_prediction_records(path.string()), ParseError);

  write_file(path, "label,predicted,confidence\n0,0,1.4\n");
  CHECK_THROWS_AS(load_prediction_records(path.string()), ParseError);

  write_file(path, "label,predicted,confidence\n");
  CHECK_THROWS_AS(load_prediction_records(path.string()), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("matched world generation lines up with the encoder") {
  ClassifierConfig cfg;
  cfg.num_classes = 4;
  cfg.context_length = 4;
  cfg.token_dim = 16;
  cfg.feature_dim = 64;
  cfg.seed = 21;
  FrozenEncoder enc = FrozenEncoder::create(cfg, true);

  SyntheticSpec spec = base_spec();
  spec.seed = 21;
  spec.noise_sigma = 0.0;
  spec.overlap = 0.0;
  EmbeddingDataset ds = generate(spec, enc.world_frame());

  // zero prompts -> text features equal class directions equal class means
  PromptBank zero(DenseMatrix(cfg.num_classes * cfg.context_length, cfg.token_dim),
                  cfg.num_classes, cfg.context_length);
  DenseMatrix u = encode_text(zero, enc);
  PredictionBatch batch = classify(ds.features, u, 100.0, ds.labels);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(batch.predicted[i] == ds.labels[i]);
  }
}
