#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace binprompt {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// x * log(y) with the convention 0 * log(0) = 0.
inline double xlogy(double x, double y) { return x == 0.0 ? 0.0 : x * std::log(y); }

inline double log_add_exp(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

inline double log_sum_exp(std::span<const double> xs) {
  double m = kNegInf;
  for (double x : xs) m = std::max(m, x);
  if (m == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

inline double log_binom(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// Log-probability of one token under Bernoulli(p), exact at p in {0, 1}.
inline double log_bernoulli(int token, double p) {
  return token ? std::log(p) : std::log1p(-p);
}

// Entropy in nats of Bernoulli(p).
inline double binary_entropy(double p) { return -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p); }

struct MeanStderr {
  double mean = 0.0;
  double std_error = 0.0;
};

// Running mean and variance (Welford).
class RunningStats {
 public:
  void add(double x) {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }
  long long count() const { return n_; }
  double mean() const { return mean_; }
  double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }
  double stddev() const { return std::sqrt(variance()); }
  double std_error() const { return n_ > 0 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0; }
  MeanStderr summary() const { return {mean(), std_error()}; }

 private:
  long long n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

}  // namespace binprompt
