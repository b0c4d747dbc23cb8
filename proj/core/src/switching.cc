#include "binprompt/switching.h"

#include <algorithm>
#include <ostream>
#include <stdexcept>

#include "binprompt/generators.h"

namespace binprompt {

SwitchPosterior posterior_after(const std::vector<int>& lambdas, const BitSeq& prompt) {
  SwitchingPredictor pred(RandomSwitch{lambdas});
  for (Token t : prompt) pred.observe(t);
  return pred.posterior();
}

LatentEstimate map_latent(const SwitchPosterior& posterior) {
  if (posterior.lambdas.empty()) throw std::invalid_argument("map_latent: empty lambda set");
  const auto weights = posterior.lambda_posterior();
  std::size_t best = 0;
  for (std::size_t i = 1; i < weights.size(); ++i) {
    if (weights[i] > weights[best] ||
        (weights[i] == weights[best] && posterior.lambdas[i] < posterior.lambdas[best])) {
      best = i;
    }
  }
  LatentEstimate e;
  e.lambda = posterior.lambdas[best];
  e.phase = 0;
  // Mode of Beta(1 + S1', 1 + S0') is S1' / t; with no data fall back to the mean.
  e.eps = posterior.observed > 0 ? static_cast<double>(posterior.flipped_ones[best]) / posterior.observed : 0.5;
  e.track = bias_track(e.eps, e.lambda, posterior.observed, 0);
  return e;
}

LatentEstimate heuristic_decode(const BitSeq& prompt, const std::vector<int>& lambdas, bool allow_unknown_phase) {
  if (lambdas.empty()) throw std::invalid_argument("heuristic_decode: empty lambda set");
  std::vector<int> sorted = lambdas;
  std::sort(sorted.begin(), sorted.end());
  const int len = prompt.length();
  int best_distance = len + 1;
  LatentEstimate e;
  for (int lambda : sorted) {
    if (lambda < 1) throw std::invalid_argument("heuristic_decode: lambda must be positive");
    const int phases = allow_unknown_phase ? 2 * lambda : 1;
    for (int phase = 0; phase < phases; ++phase) {
      int distance = 0;
      for (int t = 0; t < len; ++t) distance += prompt[t] != static_cast<Token>(in_flipped_run(t + phase, lambda));
      if (distance < best_distance) {
        best_distance = distance;
        e.lambda = lambda;
        e.phase = phase;
      }
    }
  }
  e.eps = len > 0 ? static_cast<double>(best_distance) / len : 0.0;
  e.track = bias_track(e.eps, e.lambda, len, e.phase);
  return e;
}

void write_estimate_row(std::ostream& os, const BitSeq& prompt, const LatentEstimate& e) {
  os.precision(17);
  os << prompt.str() << ',' << e.lambda << ',' << e.phase << ',' << e.eps << '\n';
}

}  // namespace binprompt
