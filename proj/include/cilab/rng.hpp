#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace cilab {

// Derives an independent child seed from a base seed and a tag. Used to
// give every consumer (weight init, shuffling, exemplar selection, ...)
// its own stream so adding a consumer never perturbs the others.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag);
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::uint64_t index);

// Deterministic random stream. The engine is std::mt19937_64, whose raw
// output sequence is fixed by the standard; all distributions are
// implemented here by hand because the std::*_distribution adapters are
// implementation-defined and would break cross-platform reproducibility.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53-bit resolution.
  double next_uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double next_uniform(double lo, double hi) {
    return lo + (hi - lo) * next_uniform();
  }

  // Standard normal via Box-Muller; caches the second deviate.
  double next_normal();

  // Uniform integer in [0, n); n must be positive. Rejection sampling,
  // so the result is exactly uniform.
  std::size_t next_index(std::size_t n);

  // Fisher-Yates shuffle driven by next_index.
  template <typename T>
  void shuffle(std::vector<T>& values) {
    if (values.size() < 2) return;
    for (std::size_t i = values.size() - 1; i > 0; --i) {
      const std::size_t j = next_index(i + 1);
      std::swap(values[i], values[j]);
    }
  }

  // Sample k distinct values from [0, n) in selection order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace cilab
