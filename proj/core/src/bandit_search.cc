#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "binprompt/bandit.h"
#include "binprompt/parallel.h"

namespace binprompt {

namespace {

// Arm whose (wins, losses) pair is larger, or nothing when both arms have
// the same counts and every skill level picks either arm with probability 1/2.
std::optional<Arm> leading_arm(const ArmCounts& c) {
  const std::pair left{c.wins[0], c.losses[0]};
  const std::pair right{c.wins[1], c.losses[1]};
  if (left == right) return std::nullopt;
  return left > right ? Arm::kLeft : Arm::kRight;
}

}  // namespace

class SkillLikelihoodCache {
 public:
  explicit SkillLikelihoodCache(std::vector<double> tau) : tau_(std::move(tau)) {
    for (const auto& [max_total, nodes] : kTiers) tiers_.push_back(make_tier(max_total, nodes));
  }

  const std::vector<double>& tau() const { return tau_; }

  // P(pull `first`) at every grid point, where `first` is the leading arm.
  // The reference stays valid until the next call.
  Eigen::Map<const Eigen::ArrayXf> first_arm(const ArmCounts& c, Arm first) {
    const int f = index(first);
    const int s = 1 - f;
    const std::uint64_t key = pack(c.wins[f]) | pack(c.losses[f]) << 16 | pack(c.wins[s]) << 32 |
                              pack(c.losses[s]) << 48;
    const std::size_t slot = splitmix64_mix(key) & (kSlots - 1);
    const Eigen::Index points = static_cast<Eigen::Index>(tau_.size());
    if (expanded_.size() == 0) {
      expanded_.resize(points, kSlots);
      slot_keys_.assign(kSlots, kEmpty);
    }
    float* column = expanded_.data() + static_cast<std::ptrdiff_t>(slot) * points;
    if (slot_keys_[slot] != key) {
      const Tier& tier = tier_for(c.total());
      Eigen::Map<Eigen::VectorXf>(column, points) =
          tier.expand * Eigen::Map<const Eigen::VectorXf>(node_values(key, c, f, tier), tier.nodes);
      slot_keys_[slot] = key;
    }
    return Eigen::Map<const Eigen::ArrayXf>(column, points);
  }

 private:
  static constexpr std::size_t kSlots = std::size_t{1} << 14;
  static constexpr std::uint64_t kEmpty = ~std::uint64_t{0};
  // Node counts by total pulls, sized so interpolation error stays near 1e-6.
  static constexpr std::array<std::pair<int, int>, 5> kTiers{
      {{10, 16}, {40, 24}, {100, 32}, {200, 48}, {std::numeric_limits<int>::max(), 64}}};

  struct Tier {
    int max_total = 0;
    int nodes = 0;
    std::vector<double> sqrt_tau;  // Chebyshev-Lobatto nodes in sqrt(tau)
    Eigen::MatrixXf expand;        // grid x nodes barycentric weights
  };

  static std::uint64_t pack(int n) {
    if (n < 0 || n > 0xFFFF) throw std::out_of_range("skill likelihood cache: count out of range");
    return static_cast<std::uint64_t>(n);
  }

  Tier make_tier(int max_total, int nodes) const {
    Tier t{max_total, nodes, std::vector<double>(nodes), Eigen::MatrixXf::Zero(static_cast<Eigen::Index>(tau_.size()), nodes)};
    std::vector<double> bary(nodes);
    for (int k = 0; k < nodes; ++k) {
      t.sqrt_tau[k] = 0.5 * (1.0 - std::cos(std::numbers::pi * k / (nodes - 1)));
      bary[k] = (k % 2 ? -1.0 : 1.0) * (k == 0 || k == nodes - 1 ? 0.5 : 1.0);
    }
    for (std::size_t i = 0; i < tau_.size(); ++i) {
      const double s = std::sqrt(tau_[i]);
      std::vector<double> terms(nodes);
      double denom = 0.0;
      int exact = -1;
      for (int k = 0; k < nodes && exact < 0; ++k) {
        const double diff = s - t.sqrt_tau[k];
        if (std::abs(diff) < 1e-14) {
          exact = k;
        } else {
          terms[k] = bary[k] / diff;
          denom += terms[k];
        }
      }
      for (int k = 0; k < nodes; ++k) {
        t.expand(static_cast<Eigen::Index>(i), k) =
            static_cast<float>(exact >= 0 ? (k == exact ? 1.0 : 0.0) : terms[k] / denom);
      }
    }
    return t;
  }

  const Tier& tier_for(int total) const {
    for (const Tier& t : tiers_) {
      if (total <= t.max_total) return t;
    }
    return tiers_.back();
  }

  const float* node_values(std::uint64_t key, const ArmCounts& c, int f, const Tier& tier) {
    auto it = offsets_.find(key);
    if (it == offsets_.end()) {
      const int s = 1 - f;
      const std::size_t offset = pool_.size();
      for (int k = 0; k < tier.nodes; ++k) {
        const double tau = tier.sqrt_tau[k] * tier.sqrt_tau[k];
        pool_.push_back(k == 0 ? 0.5f
                               : static_cast<float>(beta_gt_prob_fast(1.0 + tau * c.wins[f], 1.0 + tau * c.losses[f],
                                                                      1.0 + tau * c.wins[s], 1.0 + tau * c.losses[s])));
      }
      it = offsets_.emplace(key, offset).first;
    }
    return pool_.data() + it->second;
  }

  std::vector<double> tau_;
  std::vector<Tier> tiers_;
  std::unordered_map<std::uint64_t, std::size_t> offsets_;
  std::vector<float> pool_;
  Eigen::MatrixXf expanded_;
  std::vector<std::uint64_t> slot_keys_;
};

BayesGridPolicy::BayesGridPolicy(const TauGrid& prior)
    : cache_(std::make_shared<SkillLikelihoodCache>(prior.tau)) {
  const std::vector<double> w = prior.weights();
  prior_ = std::make_shared<const Eigen::ArrayXd>(Eigen::Map<const Eigen::ArrayXd>(w.data(), prior.size()));
  weights_ = *prior_;
}

void BayesGridPolicy::reset() {
  weights_ = *prior_;
  counts_ = {};
}

void BayesGridPolicy::observe(Pull p) {
  if (const auto first = leading_arm(counts_)) {
    const auto g = cache_->first_arm(counts_, *first);
    if (p.arm == *first) {
      weights_ *= g.cast<double>();
    } else {
      weights_ *= (1.0f - g).cast<double>();
    }
    weights_ /= weights_.sum();
  }
  counts_.record(p);
}

ActionProbs BayesGridPolicy::probs() const {
  const auto first = leading_arm(counts_);
  if (!first) return {0.5, 0.5};
  const auto g = cache_->first_arm(counts_, *first);
  const double lead = (weights_ * g.cast<double>()).sum();
  const double trail = (weights_ * (1.0f - g).cast<double>()).sum();
  const double total = lead + trail;
  return *first == Arm::kLeft ? ActionProbs{lead / total, trail / total} : ActionProbs{trail / total, lead / total};
}

std::unique_ptr<ActionPolicy> BayesGridPolicy::clone() const { return std::make_unique<BayesGridPolicy>(*this); }

std::unique_ptr<ActionPolicy> BayesGridPolicy::fork() const {
  auto copy = std::make_unique<BayesGridPolicy>(*this);
  copy->cache_ = std::make_shared<SkillLikelihoodCache>(cache_->tau());
  return copy;
}

ActionProbs SkillAgentPolicy::probs() const {
  const double left = agent_.prob_left();
  return {left, 1.0 - left};
}

std::string SkillAgentPolicy::name() const {
  std::ostringstream os;
  os << "skill-agent:" << agent_.tau;
  return os.str();
}

NeuralActionPolicy::NeuralActionPolicy(std::shared_ptr<const NeuralModel> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("NeuralActionPolicy: null model");
  if (model_->config().vocab != 3) throw std::invalid_argument("NeuralActionPolicy: model needs a 3-symbol vocabulary");
  reset();
}

void NeuralActionPolicy::reset() { stream_ = model_->start(); }

void NeuralActionPolicy::observe(Pull p) {
  model_->step(stream_, static_cast<Token>(index(p.arm)));
  model_->step(stream_, p.reward ? 1 : 0);
}

void NeuralActionPolicy::end_prompt() { model_->step(stream_, kSeparator); }

ActionProbs NeuralActionPolicy::probs() const { return {1.0 - stream_.prob_one, stream_.prob_one}; }

std::string NeuralActionPolicy::name() const { return "neural:" + to_string(model_->config().torso); }

namespace {

constexpr long long kEpisodeBlock = 64;

struct BlockTally {
  long long return_sum = 0;
  long long return_sq = 0;
  std::vector<double> regret;
  long long wins = 0;
  long long stays = 0;
  long long losses = 0;
  long long shifts = 0;
};

// Returns the policy after it has seen the prompt for episode e.
using Primer = std::function<std::unique_ptr<ActionPolicy>(const ActionPolicy& base, long long episode)>;

void run_block(const ActionPolicy& base, const Primer& prime, const RolloutOptions& opts, long long begin,
               long long end, BlockTally& tally) {
  tally.regret.assign(opts.steps, 0.0);
  const SeedSpec root{opts.seed, {}};
  for (long long e = begin; e < end; ++e) {
    const auto pair = static_cast<std::uint64_t>(e / 2);
    const bool mirror = e % 2 == 1;
    Rng rng(root.child(pair));
    BanditEnv env = BanditEnv::sample(rng);
    if (mirror) env = env.mirrored();
    // The arm the action uniform is compared against; swapping it with the
    // environment makes the odd episode the exact mirror image of the even one.
    const Arm anchor = mirror ? Arm::kRight : Arm::kLeft;
    auto policy = prime(base, e);
    long long ret = 0;
    std::optional<Pull> prev;
    for (int t = 0; t < opts.steps; ++t) {
      const double u = rng.uniform();
      const double w = rng.uniform();
      const ActionProbs p = policy->probs();
      const double anchor_prob = anchor == Arm::kLeft ? p.left : p.right;
      const Arm arm = u * (p.left + p.right) < anchor_prob ? anchor : other(anchor);
      const Pull pull{arm, w < env.value(arm)};
      tally.regret[t] += env.best_value() - env.value(arm);
      if (prev) {
        if (prev->reward) {
          ++tally.wins;
          tally.stays += pull.arm == prev->arm;
        } else {
          ++tally.losses;
          tally.shifts += pull.arm != prev->arm;
        }
      }
      prev = pull;
      ret += pull.reward;
      policy->observe(pull);
    }
    tally.return_sum += ret;
    tally.return_sq += ret * ret;
  }
}

BehaviorMetrics run_episodes(const ActionPolicy& base, const Primer& prime, const RolloutOptions& opts) {
  if (opts.steps < 1 || opts.episodes < 1 || opts.first_episode < 0) {
    throw std::invalid_argument("rollout: steps and episodes must be positive");
  }
  const long long blocks = (opts.episodes + kEpisodeBlock - 1) / kEpisodeBlock;
  std::vector<BlockTally> tallies(static_cast<std::size_t>(blocks));
  auto work = [&](const ActionPolicy& pol, std::size_t b0, std::size_t b1) {
    for (std::size_t b = b0; b < b1; ++b) {
      const long long begin = opts.first_episode + static_cast<long long>(b) * kEpisodeBlock;
      const long long end = std::min(begin + kEpisodeBlock, opts.first_episode + opts.episodes);
      run_block(pol, prime, opts, begin, end, tallies[b]);
    }
  };
  if (opts.workers <= 1) {
    work(base, 0, tallies.size());
  } else {
    parallel_chunks(tallies.size(), opts.workers, [&](std::size_t b0, std::size_t b1) {
      const auto own = base.fork();
      work(*own, b0, b1);
    });
  }

  BehaviorMetrics m;
  m.episodes = opts.episodes;
  m.instantaneous_regret.assign(opts.steps, 0.0);
  long long sum = 0;
  long long sq = 0;
  long long wins = 0, stays = 0, losses = 0, shifts = 0;
  for (const BlockTally& t : tallies) {
    sum += t.return_sum;
    sq += t.return_sq;
    for (int s = 0; s < opts.steps; ++s) m.instantaneous_regret[s] += t.regret[s];
    wins += t.wins;
    stays += t.stays;
    losses += t.losses;
    shifts += t.shifts;
  }
  const auto n = static_cast<double>(opts.episodes);
  for (double& r : m.instantaneous_regret) r /= n;
  m.mean_return = static_cast<double>(sum) / n;
  if (opts.episodes > 1) {
    const double var = (static_cast<double>(sq) - static_cast<double>(sum) * static_cast<double>(sum) / n) / (n - 1.0);
    m.std_error = std::sqrt(std::max(0.0, var) / n);
  }
  if (wins > 0) m.ws = static_cast<double>(stays) / static_cast<double>(wins);
  if (losses > 0) m.ls = static_cast<double>(shifts) / static_cast<double>(losses);
  return m;
}

std::unique_ptr<ActionPolicy> primed_copy(const ActionPolicy& policy, const BanditPrompt& prompt) {
  auto primed = policy.clone();
  primed->reset();
  for (const Pull& p : prompt.pulls) primed->observe(p);
  primed->end_prompt();
  return primed;
}

}  // namespace

BehaviorMetrics rollout(const ActionPolicy& policy, const BanditPrompt& prompt, const RolloutOptions& opts) {
  const auto primed = primed_copy(policy, prompt);
  return run_episodes(*primed, [](const ActionPolicy& base, long long) { return base.clone(); }, opts);
}

BehaviorMetrics rollout_demonstrations(const ActionPolicy& policy, int prompt_len, const RolloutOptions& opts) {
  const SeedSpec demos = SeedSpec{opts.seed, {}}.child(std::numeric_limits<std::uint64_t>::max());
  return run_episodes(
      policy,
      [&](const ActionPolicy& base, long long e) {
        Rng rng(demos.child(static_cast<std::uint64_t>(e / 2)));
        const BanditPrompt demo = ts_demonstration(prompt_len, rng);
        return primed_copy(base, e % 2 == 1 ? demo.mirrored() : demo);
      },
      opts);
}

BanditSearchResult prompt_search(const ActionPolicy& policy, const BanditSearchOptions& opts) {
  if (opts.prompt_len < 1 || opts.prompt_len > 16) throw std::invalid_argument("prompt_search: prompt_len must be in [1, 16]");
  if (opts.episodes < 1 || opts.steps < 1 || opts.finalists < 1 || opts.refine_factor < 1) {
    throw std::invalid_argument("prompt_search: episodes, steps, finalists and refine_factor must be positive");
  }
  const std::uint64_t count = std::uint64_t{1} << (2 * opts.prompt_len);
  auto finalists = static_cast<std::size_t>(std::min<std::uint64_t>(opts.finalists, count));
  const double pulls = static_cast<double>(opts.steps) * static_cast<double>(opts.episodes) *
                       (static_cast<double>(count) + static_cast<double>(finalists) * opts.refine_factor);
  if (pulls > opts.max_pull_budget && !opts.long_run) {
    std::ostringstream msg;
    msg << "bandit prompt search needs about " << pulls << " simulated pulls (" << count << " prompts x "
        << opts.episodes << " episodes x " << opts.steps << " steps plus refinement), over the budget of "
        << opts.max_pull_budget << "; enable the long-run flag to proceed";
    throw BudgetError(msg.str());
  }

  auto options = [&](long long episodes) {
    return RolloutOptions{opts.steps, episodes, 0, opts.seed, 1};
  };
  std::vector<MeanStderr> stage1(count);
  parallel_chunks(count, opts.workers, [&](std::size_t b, std::size_t e) {
    const auto own = opts.workers > 1 ? policy.fork() : policy.clone();
    for (std::size_t i = b; i < e; ++i) {
      const BehaviorMetrics m = rollout(*own, BanditPrompt::from_code(i, opts.prompt_len), options(opts.episodes));
      stage1[i] = {m.mean_return, m.std_error};
    }
  });

  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return stage1[x].mean > stage1[y].mean; });

  // Mirror images and final-reward twins tie exactly; keep tied groups whole.
  while (finalists < count && stage1[order[finalists]].mean == stage1[order[finalists - 1]].mean) ++finalists;

  std::vector<MeanStderr> stage2(finalists);
  parallel_chunks(finalists, opts.workers, [&](std::size_t b, std::size_t e) {
    const auto own = opts.workers > 1 ? policy.fork() : policy.clone();
    for (std::size_t i = b; i < e; ++i) {
      const BehaviorMetrics m = rollout(*own, BanditPrompt::from_code(order[i], opts.prompt_len),
                                        options(opts.episodes * opts.refine_factor));
      stage2[i] = {m.mean_return, m.std_error};
    }
  });

  BanditSearchResult result;
  result.ranked.reserve(count);
  for (std::size_t r = 0; r < count; ++r) {
    PromptValue v{BanditPrompt::from_code(order[r], opts.prompt_len), stage1[order[r]], std::nullopt};
    if (r < finalists) v.stage2 = stage2[r];
    result.ranked.push_back(std::move(v));
  }
  double best = -std::numeric_limits<double>::infinity();
  for (const MeanStderr& m : stage2) best = std::max(best, m.mean);
  std::vector<std::size_t> winners;
  for (std::size_t i = 0; i < finalists; ++i) {
    if (std::abs(stage2[i].mean - best) <= 1e-12 * std::max(1.0, std::abs(best))) winners.push_back(order[i]);
  }
  std::sort(winners.begin(), winners.end());
  for (std::size_t code : winners) result.best_prompts.push_back(BanditPrompt::from_code(code, opts.prompt_len));
  for (std::size_t i = 0; i < finalists; ++i) {
    if (order[i] == winners.front()) result.best = stage2[i];
  }
  return result;
}

void write_metrics_csv(std::ostream& os, const std::vector<std::pair<BanditPrompt, BehaviorMetrics>>& rows) {
  const auto old = os.precision(17);
  os << "prompt,episodes,mean_return,stderr,ws,ls\n";
  for (const auto& [prompt, m] : rows) {
    os << prompt.str() << ',' << m.episodes << ',' << m.mean_return << ',' << m.std_error << ',';
    if (m.ws) os << *m.ws;
    os << ',';
    if (m.ls) os << *m.ls;
    os << '\n';
  }
  os.precision(old);
}

void write_rank_csv(std::ostream& os, const BanditSearchResult& result) {
  const auto old = os.precision(17);
  os << "rank,prompt,return,stderr,refined_return,refined_stderr\n";
  for (std::size_t r = 0; r < result.ranked.size(); ++r) {
    const PromptValue& v = result.ranked[r];
    os << r + 1 << ',' << v.prompt.str() << ',' << v.stage1.mean << ',' << v.stage1.std_error << ',';
    if (v.stage2) os << v.stage2->mean << ',' << v.stage2->std_error;
    else os << ',';
    os << '\n';
  }
  os.precision(old);
}

}  // namespace binprompt
