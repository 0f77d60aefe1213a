#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace avvp {

/// Deterministic random source. Wraps std::mt19937_64 but derives every
/// distribution itself, so the produced streams are identical across standard
/// library implementations and can be serialized bit-exactly into checkpoints.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);

  /// Uniform integer in [lo, hi], inclusive. Rejection sampled, unbiased.
  int64_t uniform_int(int64_t lo, int64_t hi);

  double normal(double mean = 0.0, double sigma = 1.0);

  /// Poisson draw via inversion of the exponential product (small lambda).
  int64_t poisson(double lambda);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
      int64_t j = uniform_int(0, i);
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
    }
  }

  std::string serialize() const;
  static Rng deserialize(const std::string& s);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// Stable combination of seed material (splitmix64 finalizer over a mix).
uint64_t mix_seed(uint64_t a, uint64_t b);

}  // namespace avvp
