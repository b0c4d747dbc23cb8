#pragma once

#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "binprompt/rng.h"
#include "binprompt/seq.h"

namespace binprompt {

// Fixed coin. Endpoints 0 and 1 are allowed.
struct Bern {
  double tau = 0.5;
};

// Two-coin mixture; `w` is the prior weight of the tau2 coin.
struct BernMix {
  double w = 0.5;
  double tau1 = 0.2;
  double tau2 = 0.7;
};

// Coin with a Beta(alpha, beta) prior on its bias.
struct BetaBern {
  double alpha = 1.0;
  double beta = 1.0;
};

// Bias alternates eps, 1 - eps in runs of `lambda`, starting with eps.
struct SwitchProc {
  double eps = 0.0;
  int lambda = 3;
};

// SwitchProc with eps ~ U[0, 1] and lambda uniform on `lambdas`.
struct RandomSwitch {
  std::vector<int> lambdas = {3, 4, 5};
};

using GeneratorSpec = std::variant<Bern, BernMix, BetaBern, SwitchProc, RandomSwitch>;

// Throws std::invalid_argument when parameters are out of range.
void validate(const GeneratorSpec& spec);

// True for generators whose tokens are i.i.d. given the latent coin bias.
bool is_cib(const GeneratorSpec& spec);
std::string describe(const GeneratorSpec& spec);

struct CoinLatent {
  double tau = 0.5;
};
struct SwitchLatent {
  double eps = 0.0;
  int lambda = 3;
};
using LatentValue = std::variant<CoinLatent, SwitchLatent>;

LatentValue sample_latent(const GeneratorSpec& spec, Rng& rng);

// Per-position bias of a switching coin. `phase` shifts the start of the
// pattern; generators always use phase 0.
std::vector<double> bias_track(double eps, int lambda, int length, int phase = 0);

// True when position t (0-based) lies in a (1 - eps) run.
inline bool in_flipped_run(int t, int lambda) { return (t / lambda) % 2 == 1; }

BitSeq sample_sequence(const LatentValue& latent, int length, Rng& rng);
BitSeq sample_sequence(const GeneratorSpec& spec, int length, Rng& rng);

double cond_log_prob(const LatentValue& latent, std::span<const Token> seq);
double marginal_log_prob(const GeneratorSpec& spec, std::span<const Token> seq);

// log p(x) for any one sequence with counts `c`; CIB generators only.
double marginal_log_prob_counts(const GeneratorSpec& spec, Counts c);

// Latent-coin law of a discrete CIB generator as (tau, weight) atoms. Empty
// for BetaBern, whose prior is continuous.
std::vector<std::pair<double, double>> coin_atoms(const GeneratorSpec& spec);

// Latent is redrawn for every sequence. The dataset records seed.key().
TaskDataset sample_dataset(const GeneratorSpec& spec, int n, int length, const SeedSpec& seed);

void to_json(nlohmann::json& j, const GeneratorSpec& spec);
// Throws std::invalid_argument naming the offending key.
void from_json(const nlohmann::json& j, GeneratorSpec& spec);
GeneratorSpec parse_generator(const nlohmann::json& j);

}  // namespace binprompt
