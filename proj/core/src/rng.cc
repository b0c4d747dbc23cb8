#include "binprompt/rng.h"

#include <stdexcept>

#include <boost/random/beta_distribution.hpp>
#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

namespace binprompt {

std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

SeedSpec SeedSpec::child(std::uint64_t index) const {
  SeedSpec s = *this;
  s.stream_path.push_back(index);
  return s;
}

SeedSpec SeedSpec::child(std::initializer_list<std::uint64_t> indices) const {
  SeedSpec s = *this;
  s.stream_path.insert(s.stream_path.end(), indices.begin(), indices.end());
  return s;
}

std::uint64_t SeedSpec::key() const {
  std::uint64_t k = splitmix64_mix(root_seed);
  for (std::uint64_t p : stream_path) k = splitmix64_mix(k + 0x9E3779B97F4A7C15ull * (p + 1));
  return k;
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>((*this)());
  const std::uint64_t limit = max() - max() % span;
  std::uint64_t r;
  do {
    r = (*this)();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

// Boost.Random distributions use fixed algorithms, so streams reproduce
// across standard library implementations.
double Rng::normal() { return boost::random::normal_distribution<double>()(*this); }

double Rng::gamma(double shape) {
  if (!(shape > 0)) throw std::invalid_argument("gamma: shape must be positive");
  return boost::random::gamma_distribution<double>(shape)(*this);
}

double Rng::beta(double a, double b) {
  if (!(a > 0) || !(b > 0)) throw std::invalid_argument("beta: parameters must be positive");
  return boost::random::beta_distribution<double>(a, b)(*this);
}

}  // namespace binprompt
