#pragma once

#include <iosfwd>
#include <vector>

#include "binprompt/bayes.h"
#include "binprompt/seq.h"

namespace binprompt {

struct LatentEstimate {
  int lambda = 0;
  int phase = 0;  // in [0, 2 * lambda)
  double eps = 0.5;
  std::vector<double> track;  // estimated bias per prompt position
};

// MAP lambda under the posterior (ties go to the smallest lambda) and the
// mode of eps given that lambda. Phase is always 0.
LatentEstimate map_latent(const SwitchPosterior& posterior);

// Posterior of the switching Bayes predictor after observing `prompt`.
SwitchPosterior posterior_after(const std::vector<int>& lambdas, const BitSeq& prompt);

// Matches the prompt against every noiseless template over lambdas and (when
// allowed) all 2 * lambda phases; the nearest in Hamming distance wins, ties
// going to the smallest lambda and then the smallest phase. eps is the
// fraction of mismatched positions.
LatentEstimate heuristic_decode(const BitSeq& prompt, const std::vector<int>& lambdas,
                                bool allow_unknown_phase = true);

// CSV row fields: prompt,lambda_hat,phase_hat,eps_hat.
void write_estimate_row(std::ostream& os, const BitSeq& prompt, const LatentEstimate& e);

}  // namespace binprompt
