#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "binprompt/neural.h"
#include "binprompt/numerics.h"
#include "binprompt/rng.h"
#include "binprompt/seq.h"

namespace binprompt {

enum class Arm : std::uint8_t { kLeft = 0, kRight = 1 };

inline Arm other(Arm a) { return a == Arm::kLeft ? Arm::kRight : Arm::kLeft; }
inline int index(Arm a) { return static_cast<int>(a); }

struct Pull {
  Arm arm = Arm::kLeft;
  bool reward = false;

  friend bool operator==(const Pull&, const Pull&) = default;
};

struct BanditEnv {
  double v_left = 0.5;
  double v_right = 0.5;

  double value(Arm a) const { return a == Arm::kLeft ? v_left : v_right; }
  double best_value() const { return std::max(v_left, v_right); }
  BanditEnv mirrored() const { return {v_right, v_left}; }
  // Both arms drawn from Uniform([0, 1]).
  static BanditEnv sample(Rng& rng);

  friend bool operator==(const BanditEnv&, const BanditEnv&) = default;
};

// Reward and no-reward tallies per arm.
struct ArmCounts {
  std::array<int, 2> wins{};
  std::array<int, 2> losses{};

  void record(Pull p) { ++(p.reward ? wins : losses)[index(p.arm)]; }
  int total() const { return wins[0] + wins[1] + losses[0] + losses[1]; }
  ArmCounts mirrored() const { return {{wins[1], wins[0]}, {losses[1], losses[0]}}; }
  friend bool operator==(const ArmCounts&, const ArmCounts&) = default;
};

// Thompson sampling with pseudocounts scaled by the skill tau: each arm's
// value is drawn from Beta(1 + tau * wins, 1 + tau * losses).
struct SkillAgent {
  double tau = 1.0;
  ArmCounts counts;

  Arm act(Rng& rng) const;
  // Exact probability that act() picks the left arm.
  double prob_left() const;
  void record(Pull p) { counts.record(p); }
};

// tau = u^k with u ~ Uniform([0, 1]).
double sample_skill(Rng& rng, double k = 4.0);

struct BanditPrompt {
  std::vector<Pull> pulls;

  int size() const { return static_cast<int>(pulls.size()); }
  // Space-separated pulls such as "L0 R1 R1 R1".
  std::string str() const;
  static BanditPrompt parse(const std::string& text);
  BanditPrompt mirrored() const;
  // Tokens a0 r0 a1 r1 ... read as a big-endian integer (L = 0, R = 1).
  std::uint64_t code() const;
  static BanditPrompt from_code(std::uint64_t code, int length);

  friend bool operator==(const BanditPrompt&, const BanditPrompt&) = default;
};

struct BanditTrajectory {
  double skill = 0.0;
  BanditEnv prompt_env;
  BanditEnv rollout_env;
  std::uint64_t seed = 0;
  BanditPrompt prompt;
  std::vector<Pull> rollout;

  friend bool operator==(const BanditTrajectory&, const BanditTrajectory&) = default;
};

// Pins parts of the generative process, for tests and demonstrations.
struct TrajectoryOverrides {
  std::optional<double> skill;
  std::optional<BanditEnv> prompt_env;
  std::optional<BanditEnv> rollout_env;
};

// One skill draw; a prompt segment in one environment, then a fresh
// environment and an agent with cleared counts for the rollout segment.
BanditTrajectory gen_trajectory(Rng& rng, int prompt_len = 8, int rollout_len = 300,
                                const TrajectoryOverrides& overrides = {});

// Tokens: action L = 0, R = 1; reward as 0/1; a separator between segments.
inline constexpr Token kSeparator = 2;
std::vector<Token> encode(const BanditTrajectory& traj);
// Inverse of encode for the pulls; the trajectory metadata is left default.
BanditTrajectory decode(std::span<const Token> tokens);
// Training example that scores action tokens only.
TrainExample to_train_example(const BanditTrajectory& traj);
Batch sample_bandit_batch(int batch_size, int prompt_len, int rollout_len, Rng& rng);

// Header line `skill=.. prompt_env=vL,vR rollout_env=vL,vR seed=..` followed
// by the token string, one trajectory per pair of lines.
void write_trajectory(std::ostream& os, const BanditTrajectory& traj);
BanditTrajectory read_trajectory(std::istream& is);

// P(X > Y) for X ~ Beta(a, b), Y ~ Beta(c, d), by 512-node Gauss-Legendre
// quadrature of F_Y against f_X over the bulk of the narrower density.
double beta_gt_prob(double a, double b, double c, double d);

struct QuadratureEstimate {
  double value = 0.0;
  // Difference between the 512- and 256-node rules.
  double error = 0.0;
};
QuadratureEstimate beta_gt_prob_checked(double a, double b, double c, double d);

// Same quantity from composite 8-point panels with one incomplete-beta anchor
// and geometric grading at the interval ends. Agrees with beta_gt_prob to a
// few 1e-7 at a few microseconds per call; used for the grid posterior.
double beta_gt_prob_fast(double a, double b, double c, double d);

// Probability that an agent with skill tau and these counts pulls left.
double skill_prob_left(double tau, const ArmCounts& counts);

// Evenly spaced skill values on [0, 1] with log-weights. The skill prior
// tau = u^k is represented by the exact prior mass of each grid cell; k = 1
// gives the uniform prior.
struct TauGrid {
  std::vector<double> tau;
  std::vector<double> log_weights;

  explicit TauGrid(int points = 1000, double k = 4.0);
  int size() const { return static_cast<int>(tau.size()); }
  std::vector<double> weights() const;
};

// Skill posterior and next-action probability for the trajectory
// distribution, evaluated directly at every grid point. Rewards enter only
// through the counts, so the posterior never depends on the latest reward.
class BanditBayes {
 public:
  explicit BanditBayes(TauGrid prior = TauGrid{});

  void reset();
  void observe(Pull p);
  // Separator: the agent's counts restart, the skill posterior carries over.
  void end_prompt() { counts_ = {}; }
  double prob_left() const;
  const TauGrid& posterior() const { return grid_; }
  const ArmCounts& counts() const { return counts_; }

 private:
  TauGrid prior_;
  TauGrid grid_;
  ArmCounts counts_;
};

// P(next action = L) after `history`, one segment without separator.
double bayes_action_prob(std::span<const Pull> history, const TauGrid& grid = TauGrid{});

struct ActionProbs {
  double left = 0.5;
  double right = 0.5;
};

// Anything that can act in the rollout: it sees the prompt, a separator,
// then its own pulls.
class ActionPolicy {
 public:
  virtual ~ActionPolicy() = default;
  virtual void reset() = 0;
  virtual void observe(Pull p) = 0;
  virtual void end_prompt() = 0;
  virtual ActionProbs probs() const = 0;
  // Copies may share caches with the original and stay on its thread.
  virtual std::unique_ptr<ActionPolicy> clone() const = 0;
  // Copy that shares nothing mutable, for use on another thread.
  virtual std::unique_ptr<ActionPolicy> fork() const { return clone(); }
  virtual std::string name() const = 0;
};

// Interpolation tables for P(L | counts, tau) across the skill grid. Values
// are computed at Chebyshev nodes in sqrt(tau), stored once per count tuple,
// and expanded to the grid on demand.
class SkillLikelihoodCache;

// The grid-posterior Bayes predictor as a policy, with the per-count
// likelihood vectors cached. Mirroring every pull maps left and right
// probabilities onto each other exactly.
class BayesGridPolicy final : public ActionPolicy {
 public:
  explicit BayesGridPolicy(const TauGrid& prior = TauGrid{});

  void reset() override;
  void observe(Pull p) override;
  void end_prompt() override { counts_ = {}; }
  ActionProbs probs() const override;
  std::unique_ptr<ActionPolicy> clone() const override;
  std::unique_ptr<ActionPolicy> fork() const override;
  std::string name() const override { return "bayes-grid"; }

  // Normalized posterior weights over the grid.
  const Eigen::ArrayXd& posterior() const { return weights_; }

 private:
  std::shared_ptr<const Eigen::ArrayXd> prior_;
  std::shared_ptr<SkillLikelihoodCache> cache_;
  Eigen::ArrayXd weights_;
  ArmCounts counts_;
};

// A skill agent that ignores the prompt.
class SkillAgentPolicy final : public ActionPolicy {
 public:
  explicit SkillAgentPolicy(double tau) : agent_{tau, {}} {}

  void reset() override { agent_.counts = {}; }
  void observe(Pull p) override { agent_.record(p); }
  void end_prompt() override { agent_.counts = {}; }
  ActionProbs probs() const override;
  std::unique_ptr<ActionPolicy> clone() const override { return std::make_unique<SkillAgentPolicy>(*this); }
  std::string name() const override;

 private:
  SkillAgent agent_;
};

// A network trained on tokenized trajectories; P(L) = 1 - P(next token = 1).
class NeuralActionPolicy final : public ActionPolicy {
 public:
  explicit NeuralActionPolicy(std::shared_ptr<const NeuralModel> model);

  void reset() override;
  void observe(Pull p) override;
  void end_prompt() override;
  ActionProbs probs() const override;
  std::unique_ptr<ActionPolicy> clone() const override { return std::make_unique<NeuralActionPolicy>(*this); }
  std::string name() const override;

 private:
  std::shared_ptr<const NeuralModel> model_;
  NeuralModel::Stream stream_;
};

struct BehaviorMetrics {
  long long episodes = 0;
  double mean_return = 0.0;
  double std_error = 0.0;
  // Mean of max(v_L, v_R) - v_{a_t} over episodes, per rollout step.
  std::vector<double> instantaneous_regret;
  std::optional<double> ws;
  std::optional<double> ls;
};

struct RolloutOptions {
  int steps = 100;
  long long episodes = 2000;
  // Episodes are numbered; rollouts over the same range see the same
  // environments and random numbers whatever the prompt.
  long long first_episode = 0;
  std::uint64_t seed = 0;
  int workers = 1;
};

// Episodes come in mirrored pairs: episode 2k + 1 swaps the arms of episode
// 2k's environment and reuses its random numbers with the arm roles swapped,
// so a prompt and its mirror image score identically.
BehaviorMetrics rollout(const ActionPolicy& policy, const BanditPrompt& prompt, const RolloutOptions& opts);

// Like rollout, but each episode pair gets its own full-skill demonstration
// as the prompt (mirrored for the odd episode).
BehaviorMetrics rollout_demonstrations(const ActionPolicy& policy, int prompt_len, const RolloutOptions& opts);

struct PromptValue {
  BanditPrompt prompt;
  MeanStderr stage1;
  std::optional<MeanStderr> stage2;
};

struct BanditSearchOptions {
  int prompt_len = 4;
  int steps = 100;
  long long episodes = 2000;
  int finalists = 20;
  int refine_factor = 10;
  std::uint64_t seed = 0;
  int workers = 1;
  // Prompts x episodes x steps allowed without long_run.
  double max_pull_budget = 2e9;
  bool long_run = false;
};

struct BanditSearchResult {
  // Prompts tied for the best refined return (mirror images and the free
  // final reward make ties exact).
  std::vector<BanditPrompt> best_prompts;
  MeanStderr best;
  // Every prompt sorted by first-stage return, best first.
  std::vector<PromptValue> ranked;
};

// Every prompt of the given length at `episodes` rollouts with common random
// numbers, then the top `finalists` again at refine_factor times as many.
// Throws BudgetError with the cost estimate when over budget.
BanditSearchResult prompt_search(const ActionPolicy& policy, const BanditSearchOptions& opts);

struct Wsls {
  std::optional<double> win_stay;
  std::optional<double> lose_shift;
};

// Fraction of rewarded pulls followed by the same arm, and of unrewarded
// pulls followed by the other arm.
Wsls wsls(std::span<const Pull> pulls);
inline Wsls wsls(const BanditPrompt& p) { return wsls(p.pulls); }

// One arm unrewarded, then only the other arm, rewarded except possibly the
// final pull.
bool is_fail_then_streak(const BanditPrompt& p);

struct ScriptedPrompts {
  BanditPrompt max_explore;
  BanditPrompt max_exploit;
  // Hand-written mixed pattern; not taken from any published prompt.
  BanditPrompt heuristic;
};
ScriptedPrompts scripted_prompts(int length);
// Prompt segment of a full-skill (tau = 1) agent in a fresh environment.
BanditPrompt ts_demonstration(int length, Rng& rng);

void write_metrics_csv(std::ostream& os, const std::vector<std::pair<BanditPrompt, BehaviorMetrics>>& rows);
void write_rank_csv(std::ostream& os, const BanditSearchResult& result);

}  // namespace binprompt
