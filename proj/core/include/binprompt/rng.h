#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <vector>

namespace binprompt {

// Names one random stream. Streams are derived from the root seed by hashing
// the path one element at a time:
//
//   key_0     = mix(root_seed)
//   key_{i+1} = mix(key_i + 0x9E3779B97F4A7C15 * (path_i + 1))
//
// where mix is the SplitMix64 finalizer. The derivation is part of the
// reproducibility contract and must not change.
struct SeedSpec {
  std::uint64_t root_seed = 0;
  std::vector<std::uint64_t> stream_path;

  SeedSpec child(std::uint64_t index) const;
  SeedSpec child(std::initializer_list<std::uint64_t> indices) const;
  std::uint64_t key() const;
};

std::uint64_t splitmix64_mix(std::uint64_t z);

// SplitMix64 generator seeded from a stream key. Satisfies
// UniformRandomBitGenerator so it can drive <random> distributions.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t key) : state_(key) {}
  explicit Rng(const SeedSpec& seed) : state_(seed.key()) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    state_ += 0x9E3779B97F4A7C15ull;
    return splitmix64_mix(state_);
  }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
  bool bernoulli(double p) { return uniform() < p; }
  // Uniform on [lo, hi], unbiased by rejection.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  double normal();
  double gamma(double shape);
  double beta(double a, double b);

 private:
  std::uint64_t state_;
};

}  // namespace binprompt
