#include "binprompt/bayes.h"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "binprompt/numerics.h"

namespace binprompt {

namespace {

double coin_log_prob(double tau, Counts c) { return xlogy(c.ones, tau) + xlogy(c.zeros, 1.0 - tau); }

void add(Counts& c, Token t) {
  if (t) {
    ++c.ones;
  } else {
    ++c.zeros;
  }
}

Counts counts_from_state(std::span<const double> state) {
  if (state.size() != 2) throw std::invalid_argument("restore: expected two counts");
  return {static_cast<int>(state[0]), static_cast<int>(state[1])};
}

}  // namespace

double next_log_prob(const Predictor& pred, Token t) { return log_bernoulli(t, pred.next_prob_one()); }

double seq_log_prob(Predictor& pred, std::span<const Token> prompt, std::span<const Token> seq) {
  pred.reset();
  for (Token t : prompt) pred.observe(t);
  pred.end_prompt();
  double total = 0.0;
  for (Token t : seq) {
    total += next_log_prob(pred, t);
    pred.observe(t);
  }
  return total;
}

double BernPredictor::log_prob_counts(Counts, Counts seq) const { return coin_log_prob(spec_.tau, seq); }

void BernMixPredictor::observe(Token t) { add(seen_, t); }

double BernMixPredictor::w_post(Counts c) const {
  const double l1 = coin_log_prob(spec_.tau1, c);
  const double l2 = coin_log_prob(spec_.tau2, c);
  // A history impossible under both coins carries no information.
  if (l1 == kNegInf && l2 == kNegInf) return spec_.w;
  const double log_odds = std::log(spec_.w) - std::log1p(-spec_.w) + (l2 - l1);
  if (log_odds >= 0) return 1.0 / (1.0 + std::exp(-log_odds));
  const double e = std::exp(log_odds);
  return e / (1.0 + e);
}

double BernMixPredictor::next_prob_one() const {
  const double w = w_post();
  return (1.0 - w) * spec_.tau1 + w * spec_.tau2;
}

std::vector<double> BernMixPredictor::snapshot() const {
  return {static_cast<double>(seen_.zeros), static_cast<double>(seen_.ones)};
}

void BernMixPredictor::restore(std::span<const double> state) { seen_ = counts_from_state(state); }

double BernMixPredictor::log_prob_counts(Counts prompt, Counts seq) const {
  double lw1 = std::log1p(-spec_.w) + coin_log_prob(spec_.tau1, prompt);
  double lw2 = std::log(spec_.w) + coin_log_prob(spec_.tau2, prompt);
  if (lw1 == kNegInf && lw2 == kNegInf) {
    lw1 = std::log1p(-spec_.w);
    lw2 = std::log(spec_.w);
  }
  return log_add_exp(lw1 + coin_log_prob(spec_.tau1, seq), lw2 + coin_log_prob(spec_.tau2, seq)) -
         log_add_exp(lw1, lw2);
}

std::optional<double> BernMixPredictor::log_prob_ratio_counts(Counts a, Counts b, Counts seq) const {
  // Normalized log posterior weight of the first component after a prompt.
  auto first_weight = [&](Counts prompt) {
    double lw1 = std::log1p(-spec_.w) + coin_log_prob(spec_.tau1, prompt);
    double lw2 = std::log(spec_.w) + coin_log_prob(spec_.tau2, prompt);
    if (lw1 == kNegInf && lw2 == kNegInf) {
      lw1 = std::log1p(-spec_.w);
      lw2 = std::log(spec_.w);
    }
    return std::pair{lw1 - log_add_exp(lw1, lw2), lw2 - log_add_exp(lw1, lw2)};
  };
  const auto [a1, a2] = first_weight(a);
  const auto [b1, b2] = first_weight(b);
  const double g1 = coin_log_prob(spec_.tau1, seq);
  const double g2 = coin_log_prob(spec_.tau2, seq);
  const double top = std::max(g1, g2);
  if (top == kNegInf) return 0.0;
  // p(x | s) / e^top = e_major + W(s) (e_minor - e_major), with W the weight
  // of the component that is minor under b. Differencing the small weights
  // keeps the gap between a and b exact when both posteriors have settled.
  const bool first_minor = b1 <= b2;
  const double e_minor = std::exp((first_minor ? g1 : g2) - top);
  const double e_major = std::exp((first_minor ? g2 : g1) - top);
  const double wa = std::exp(first_minor ? a1 : a2);
  const double wb = std::exp(first_minor ? b1 : b2);
  const double denom = e_major + wb * (e_minor - e_major);
  return std::log1p((wa - wb) * (e_minor - e_major) / denom);
}

void BetaBernPredictor::observe(Token t) { add(seen_, t); }

double BetaBernPredictor::next_prob_one() const { return alpha_post() / (alpha_post() + beta_post()); }

std::vector<double> BetaBernPredictor::snapshot() const {
  return {static_cast<double>(seen_.zeros), static_cast<double>(seen_.ones)};
}

void BetaBernPredictor::restore(std::span<const double> state) { seen_ = counts_from_state(state); }

double BetaBernPredictor::log_prob_counts(Counts prompt, Counts seq) const {
  const double a = spec_.alpha + prompt.ones;
  const double b = spec_.beta + prompt.zeros;
  return log_beta(a + seq.ones, b + seq.zeros) - log_beta(a, b);
}

double SwitchProcPredictor::next_prob_one() const {
  return in_flipped_run(position_, spec_.lambda) ? 1.0 - spec_.eps : spec_.eps;
}

void SwitchProcPredictor::restore(std::span<const double> state) {
  if (state.size() != 1) throw std::invalid_argument("restore: expected one position");
  position_ = static_cast<int>(state[0]);
}

void SwitchPosterior::observe(Token t) {
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    flipped_ones[i] += t ^ static_cast<int>(in_flipped_run(position, lambdas[i]));
  }
  ++observed;
  ++position;
}

std::vector<double> SwitchPosterior::lambda_posterior() const {
  // Uniform prior on lambda; likelihood is the Beta integral of the
  // relabelled tokens, S1'! S0'! / (t + 1)!.
  std::vector<double> log_w(lambdas.size());
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    log_w[i] = log_beta(1.0 + flipped_ones[i], 1.0 + observed - flipped_ones[i]);
  }
  const double norm = log_sum_exp(log_w);
  for (double& v : log_w) v = std::exp(v - norm);
  return log_w;
}

double SwitchPosterior::eps_mean(std::size_t i) const {
  return (1.0 + flipped_ones[i]) / (2.0 + observed);
}

SwitchingPredictor::SwitchingPredictor(RandomSwitch spec) : spec_(std::move(spec)) {
  validate(spec_);
  post_.lambdas = spec_.lambdas;
  reset();
}

void SwitchingPredictor::reset() {
  post_.flipped_ones.assign(post_.lambdas.size(), 0);
  post_.observed = 0;
  post_.position = 0;
}

double SwitchingPredictor::next_prob_one() const {
  const auto weights = post_.lambda_posterior();
  double p = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double e = post_.eps_mean(i);
    p += weights[i] * (in_flipped_run(post_.position, post_.lambdas[i]) ? 1.0 - e : e);
  }
  return p;
}

std::vector<double> SwitchingPredictor::snapshot() const {
  std::vector<double> s = {static_cast<double>(post_.observed), static_cast<double>(post_.position)};
  for (int k : post_.flipped_ones) s.push_back(k);
  return s;
}

void SwitchingPredictor::restore(std::span<const double> state) {
  if (state.size() != 2 + post_.lambdas.size()) throw std::invalid_argument("restore: state size mismatch");
  post_.observed = static_cast<int>(state[0]);
  post_.position = static_cast<int>(state[1]);
  for (std::size_t i = 0; i < post_.lambdas.size(); ++i) post_.flipped_ones[i] = static_cast<int>(state[2 + i]);
}

std::unique_ptr<Predictor> make_bayes_predictor(const GeneratorSpec& spec) {
  validate(spec);
  if (const auto* g = std::get_if<Bern>(&spec)) return std::make_unique<BernPredictor>(*g);
  if (const auto* g = std::get_if<BernMix>(&spec)) return std::make_unique<BernMixPredictor>(*g);
  if (const auto* g = std::get_if<BetaBern>(&spec)) return std::make_unique<BetaBernPredictor>(*g);
  if (const auto* g = std::get_if<SwitchProc>(&spec)) return std::make_unique<SwitchProcPredictor>(*g);
  return std::make_unique<SwitchingPredictor>(std::get<RandomSwitch>(spec));
}

}  // namespace binprompt
