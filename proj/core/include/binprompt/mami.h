#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "binprompt/rng.h"

namespace binprompt {

// A finite latent space with prior weights, a prompting strategy nu(s | tau),
// the data model P(x | tau) and a reference predictor pbar(x | s).
struct FiniteJoint {
  Eigen::VectorXd prior;       // latents
  Eigen::MatrixXd strategy;    // latents x prompts, rows sum to 1
  Eigen::MatrixXd likelihood;  // latents x sequences, rows sum to 1
  Eigen::MatrixXd reference;   // prompts x sequences, rows sum to 1

  int latents() const { return static_cast<int>(prior.size()); }
  int prompts() const { return static_cast<int>(strategy.cols()); }
  int sequences() const { return static_cast<int>(likelihood.cols()); }

  // Throws std::invalid_argument on shape mismatches, negative entries, rows
  // that do not sum to 1 within 1e-12, or more than 1e6 table entries.
  void validate() const;
  // p(s, x) = sum_tau p(tau) nu(s | tau) P(x | tau), prompts x sequences.
  Eigen::MatrixXd joint() const;
};

double mutual_information(const FiniteJoint& j);

// MI(s; x) - E_s KL[p(x | s) || pbar(x | s)] by direct summation. Minus
// infinity when pbar is zero somewhere the joint is positive.
double mami(const FiniteJoint& j);

// The same objective as H[p(x)] + sum_{s,x} p(s, x) log pbar(x | s).
double mami_cross_entropy_form(const FiniteJoint& j);

// Per latent, the prompt maximizing sum_x P(x | tau) log pbar(x | s); ties go
// to the lowest prompt index.
std::vector<int> best_prompt_per_latent(const FiniteJoint& j);

// Deterministic strategy that sends latent i to prompt choice[i].
Eigen::MatrixXd deterministic_strategy(const std::vector<int>& choice, int prompts);

// Each row drawn from a flat Dirichlet.
Eigen::MatrixXd random_strategy(int latents, int prompts, Rng& rng);

// A random instance with strictly positive tables (the strategy is random
// too). Rows of the data model and the reference are flat-Dirichlet draws.
FiniteJoint random_finite_joint(int latents, int prompts, int sequences, Rng& rng);

struct PropositionCheck {
  bool holds = false;
  std::vector<int> witness;  // best prompt per latent
  double witness_value = 0.0;
  double best_deterministic = 0.0;
  double best_random = 0.0;
  long long deterministic_checked = 0;
};

// Checks that the per-latent best-prompt strategy attains the largest MAMI
// among every deterministic strategy and `random_strategies` stochastic ones.
// The strategy stored in `j` is ignored. Throws BudgetError when there are
// more than 1e6 deterministic strategies.
PropositionCheck verify_proposition(const FiniteJoint& j, Rng& rng, int random_strategies = 1000,
                                    double tolerance = 1e-10, int workers = 1);

}  // namespace binprompt
