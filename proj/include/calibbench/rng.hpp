#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace calibbench {

std::uint64_t fnv1a64(std::string_view bytes);

// Module-level seeds hang off one master seed via labeled hashing.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view label) {
  return master ^ fnv1a64(label);
}

// Deterministic generator: mt19937_64 stream with explicit Box-Muller
// normals so the byte-for-byte output does not depend on the standard
// library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n), unbiased.
  std::uint64_t below(std::uint64_t n);

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace calibbench
