#include "calibbench/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "calibbench/kernels.hpp"
#include "calibbench/rng.hpp"

namespace calibbench {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(current);
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(current);
  return fields;
}

double parse_double(const std::string& field, const std::string& path, std::size_t line) {
  const char* begin = field.c_str();
  char* end = nullptr;
  double v = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ParseError(path, line, "malformed number '" + field + "'");
  }
  if (!std::isfinite(v)) {
    throw ParseError(path, line, "non-finite value '" + field + "'");
  }
  return v;
}

long parse_int(const std::string& field, const std::string& path, std::size_t line) {
  const char* begin = field.c_str();
  char* end = nullptr;
  long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ParseError(path, line, "malformed integer '" + field + "'");
  }
  return v;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

std::vector<std::string> default_class_names(std::size_t k) {
  std::vector<std::string> names(k);
  for (std::size_t i = 0; i < k; ++i) names[i] = "class_" + std::to_string(i);
  return names;
}

EmbeddingDataset generate_with_frame(const SyntheticSpec& spec, const DenseMatrix& shared_dir,
                                     const DenseMatrix& class_dirs) {
  const std::size_t k = spec.num_classes;
  const std::size_t d = spec.feature_dim;
  const double rho = spec.overlap;

  DenseMatrix means(k, d);
  const double shared_coef = std::sqrt(rho);
  const double class_coef = std::sqrt(1.0 - rho);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) {
      means.at(c, j) = shared_coef * shared_dir.at(0, j) + class_coef * class_dirs.at(c, j);
    }
  }

  const std::size_t per_class = spec.train_per_class + spec.test_per_class;
  EmbeddingDataset ds;
  ds.features = DenseMatrix(k * per_class, d);
  ds.labels.resize(k * per_class);
  ds.class_names = spec.class_names.empty() ? default_class_names(k) : spec.class_names;
  std::ostringstream source;
  source << "synthetic(K=" << k << ",d=" << d << ",rho=" << rho << ",sigma=" << spec.noise_sigma
         << ",train=" << spec.train_per_class << ",test=" << spec.test_per_class
         << ",seed=" << spec.seed << ")";
  ds.provenance.kind = Provenance::Kind::Synthetic;
  ds.provenance.source = source.str();

  Rng noise(derive_seed(spec.seed, "data.noise"));
  std::size_t row = 0;
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < per_class; ++i, ++row) {
      double* x = ds.features.row_ptr(row);
      for (std::size_t j = 0; j < d; ++j) {
        x[j] = means.at(c, j) + spec.noise_sigma * noise.normal();
      }
      double norm = std::sqrt(kernels::active().dot(x, x, d));
      if (norm < 1e-12) {
        throw std::runtime_error("generate: sample collapsed to the zero vector");
      }
      kernels::active().scal(1.0 / norm, x, d);
      ds.labels[row] = static_cast<int>(c);
    }
  }
  return ds;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("SyntheticSpec: K >= 2 required");
  if (feature_dim < 2) throw std::invalid_argument("SyntheticSpec: feature_dim >= 2 required");
  if (!(overlap >= 0.0 && overlap < 1.0)) {
    throw std::invalid_argument("SyntheticSpec: overlap must lie in [0, 1)");
  }
  if (train_per_class < 1 || test_per_class < 1) {
    throw std::invalid_argument("SyntheticSpec: per-class counts must be >= 1");
  }
  if (noise_sigma < 0.0) throw std::invalid_argument("SyntheticSpec: noise_sigma must be >= 0");
  if (!class_names.empty() && class_names.size() != num_classes) {
    throw std::invalid_argument("SyntheticSpec: class_names size must equal K");
  }
}

EmbeddingDataset generate(const SyntheticSpec& spec) {
  spec.validate();
  if (spec.num_classes + 1 > spec.feature_dim) {
    throw std::invalid_argument("generate: overlap construction requires K <= feature_dim - 1");
  }
  Rng frame_rng(derive_seed(spec.seed, "data.frame"));
  DenseMatrix frame = orthonormal_rows(frame_rng, spec.num_classes + 1, spec.feature_dim);
  DenseMatrix shared(1, spec.feature_dim);
  DenseMatrix class_dirs(spec.num_classes, spec.feature_dim);
  for (std::size_t j = 0; j < spec.feature_dim; ++j) shared.at(0, j) = frame.at(0, j);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t j = 0; j < spec.feature_dim; ++j) {
      class_dirs.at(c, j) = frame.at(c + 1, j);
    }
  }
  return generate_with_frame(spec, shared, class_dirs);
}

EmbeddingDataset generate(const SyntheticSpec& spec, const WorldFrame& frame) {
  spec.validate();
  if (frame.class_dirs.rows() != spec.num_classes ||
      frame.class_dirs.cols() != spec.feature_dim || frame.shared_dir.cols() != spec.feature_dim) {
    throw std::invalid_argument("generate: world frame does not match the spec dimensions");
  }
  return generate_with_frame(spec, frame.shared_dir, frame.class_dirs);
}

FewShotSplit few_shot_split(const EmbeddingDataset& ds, std::size_t shots, std::uint64_t seed) {
  if (shots < 1) throw std::invalid_argument("few_shot_split: shots must be >= 1");
  const std::size_t k = ds.num_classes();
  std::vector<std::vector<int>> by_class(k);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    by_class[static_cast<std::size_t>(ds.labels[i])].push_back(static_cast<int>(i));
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (by_class[c].size() < shots) {
      throw std::runtime_error("few_shot_split: class " + std::to_string(c) + " has only " +
                               std::to_string(by_class[c].size()) + " samples for " +
                               std::to_string(shots) + " shots");
    }
  }

  Rng rng(derive_seed(seed, "data.split"));
  FewShotSplit split;
  split.shots = shots;
  split.seed = seed;
  std::vector<bool> in_train(ds.labels.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<int>& pool = by_class[c];
    // partial Fisher-Yates: the first `shots` entries become the draw
    for (std::size_t i = 0; i < shots; ++i) {
      std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
      std::swap(pool[i], pool[j]);
    }
    std::vector<int> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(shots));
    std::sort(chosen.begin(), chosen.end());
    for (int idx : chosen) {
      in_train[static_cast<std::size_t>(idx)] = true;
      split.train_indices.push_back(idx);
    }
  }
  for (std::size_t i = 0; i < in_train.size(); ++i) {
    if (!in_train[i]) split.test_indices.push_back(static_cast<int>(i));
  }
  return split;
}

void save_embeddings(const EmbeddingDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_embeddings: cannot open " + path);
  out << "#classes: ";
  for (std::size_t i = 0; i < ds.class_names.size(); ++i) {
    if (i > 0) out << ',';
    out << ds.class_names[i];
  }
  out << '\n';
  out << "label";
  for (std::size_t j = 0; j < ds.feature_dim(); ++j) out << ",f" << j;
  out << '\n';
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (std::size_t j = 0; j < ds.feature_dim(); ++j) {
      out << ',' << format_double(ds.features.at(i, j));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("save_embeddings: write failed for " + path);
}

EmbeddingDataset load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_embeddings: cannot open " + path);

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing class header");
  line = strip_cr(line);
  const std::string prefix = "#classes: ";
  if (line.rfind(prefix, 0) != 0) {
    throw ParseError(path, 1, "first line must start with '#classes: '");
  }
  std::vector<std::string> names = split_csv(line.substr(prefix.size()));
  if (names.empty() || (names.size() == 1 && names[0].empty())) {
    throw ParseError(path, 1, "empty class list");
  }

  ++line_no;
  if (!std::getline(in, line)) throw ParseError(path, 2, "missing column header");
  line = strip_cr(line);
  std::vector<std::string> header = split_csv(line);
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError(path, 2, "column header must be label,f0,...");
  }
  const std::size_t dim = header.size() - 1;
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j + 1] != "f" + std::to_string(j)) {
      throw ParseError(path, 2, "unexpected column '" + header[j + 1] + "'");
    }
  }

  std::vector<int> labels;
  std::vector<double> values;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() != dim + 1) {
      throw ParseError(path, line_no, "expected " + std::to_string(dim + 1) + " fields, got " +
                                          std::to_string(fields.size()));
    }
    long label = parse_int(fields[0], path, line_no);
    if (label < 0 || static_cast<std::size_t>(label) >= names.size()) {
      throw ParseError(path, line_no, "unknown label " + fields[0]);
    }
    labels.push_back(static_cast<int>(label));
    for (std::size_t j = 0; j < dim; ++j) {
      values.push_back(parse_double(fields[j + 1], path, line_no));
    }
  }
  if (labels.empty()) throw ParseError(path, line_no, "no data rows");

  EmbeddingDataset ds;
  ds.features = DenseMatrix(labels.size(), dim, std::move(values));
  ds.labels = std::move(labels);
  ds.class_names = std::move(names);
  ds.provenance.kind = Provenance::Kind::Imported;
  ds.provenance.source = path;
  ds.provenance.checksum = fnv1a64_hex_of_file(path);

  bool needs_fix = false;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    double norm = row_l2_norm(ds.features, r);
    if (norm < 1e-12) {
      throw ParseError(path, r + 3, "feature row has zero norm");
    }
    if (std::fabs(norm - 1.0) > 1e-6) needs_fix = true;
  }
  if (needs_fix) {
    ds.renormalized = true;
    for (std::size_t r = 0; r < ds.size(); ++r) {
      double norm = row_l2_norm(ds.features, r);
      kernels::active().scal(1.0 / norm, ds.features.row_ptr(r), ds.feature_dim());
    }
  }
  return ds;
}

PredictionFile load_prediction_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_prediction_records: cannot open " + path);

  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(in, line)) throw ParseError(path, 1, "missing header");
  line = strip_cr(line);
  std::vector<std::string> header = split_csv(line);
  if (header.size() < 3 || header[0] != "label" || header[1] != "predicted" ||
      header[2] != "confidence") {
    throw ParseError(path, 1, "header must be label,predicted,confidence[,p0,...]");
  }
  const std::size_t k = header.size() - 3;
  for (std::size_t j = 0; j < k; ++j) {
    if (header[j + 3] != "p" + std::to_string(j)) {
      throw ParseError(path, 1, "unexpected column '" + header[j + 3] + "'");
    }
  }

  PredictionFile out;
  std::vector<double> probs;
  while (std::getline(in, line)) {
    ++line_no;
    line = strip_cr(line);
    if (line.empty()) continue;
    std::vector<std::string> fields = split_csv(line);
    if (fields.size() != header.size()) {
      throw ParseError(path, line_no, "expected " + std::to_string(header.size()) +
                                          " fields, got " + std::to_string(fields.size()));
    }
    long label = parse_int(fields[0], path, line_no);
    long predicted = parse_int(fields[1], path, line_no);
    if (label < 0 || predicted < 0) {
      throw ParseError(path, line_no, "labels must be non-negative");
    }
    if (k > 0 && (static_cast<std::size_t>(label) >= k ||
                  static_cast<std::size_t>(predicted) >= k)) {
      throw ParseError(path, line_no, "label outside the probability columns");
    }
    double confidence = parse_double(fields[2], path, line_no);
    if (confidence < 0.0 || confidence > 1.0) {
      throw ParseError(path, line_no, "confidence " + fields[2] + " outside [0,1]");
    }
    if (k > 0) {
      double sum = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        double p = parse_double(fields[j + 3], path, line_no);
        probs.push_back(p);
        sum += p;
      }
      if (std::fabs(sum - 1.0) > 1e-6) {
        throw ParseError(path, line_no,
                         "probability row sums to " + std::to_string(sum) + ", expected 1");
      }
    }
    out.labels.push_back(static_cast<int>(label));
    out.predicted.push_back(static_cast<int>(predicted));
    out.records.push_back({confidence, label == predicted});
  }
  if (out.records.empty()) throw ParseError(path, line_no, "no data rows");
  if (k > 0) {
    out.probs = DenseMatrix(out.records.size(), k, std::move(probs));
  }
  return out;
}

ParseError::ParseError(const std::string& path, std::size_t line, const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

std::string fnv1a64_hex_of_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("fnv1a64_hex_of_file: cannot open " + path);
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      hash ^= static_cast<unsigned char>(buf[i]);
      hash *= 0x100000001b3ULL;
    }
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(hash));
  return hex;
}

}  // namespace calibbench
