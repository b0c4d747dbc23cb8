#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "binprompt/generators.h"
#include "binprompt/seq.h"

namespace binprompt {

// Closed-form prompted sequence probability for predictors whose posterior
// depends on the history only through its counts.
class CountModel {
 public:
  virtual ~CountModel() = default;
  // log p(x | s) for any single x with counts `seq` after a prompt with
  // counts `prompt`.
  virtual double log_prob_counts(Counts prompt, Counts seq) const = 0;
  // log p(x | a) - log p(x | b) computed without cancelling two nearly equal
  // logs, for models that can. Prompt search uses it to order near-ties.
  virtual std::optional<double> log_prob_ratio_counts(Counts, Counts, Counts) const { return std::nullopt; }
};

// Streaming next-token predictor. Prompts act on it by being observed before
// the scored sequence.
class Predictor {
 public:
  virtual ~Predictor() = default;

  virtual void reset() = 0;
  virtual void observe(Token t) = 0;
  virtual double next_prob_one() const = 0;
  // Called between a prompt and the sequence it conditions. Predictors whose
  // latent has a time structure use it to restart their clock.
  virtual void end_prompt() {}

  virtual std::vector<double> snapshot() const = 0;
  virtual void restore(std::span<const double> state) = 0;
  virtual std::unique_ptr<Predictor> clone() const = 0;
  virtual std::string name() const = 0;

  virtual const CountModel* count_model() const { return nullptr; }
};

// log P(next token = t).
double next_log_prob(const Predictor& pred, Token t);

// Resets, observes the prompt, calls end_prompt, then returns the summed
// log-probability of `seq`. Prompt tokens carry no loss.
double seq_log_prob(Predictor& pred, std::span<const Token> prompt, std::span<const Token> seq);
inline double seq_log_prob(Predictor& pred, const BitSeq& prompt, const BitSeq& seq) {
  return seq_log_prob(pred, prompt.tokens(), seq.tokens());
}

class BernPredictor final : public Predictor, public CountModel {
 public:
  explicit BernPredictor(Bern spec) : spec_(spec) {}

  void reset() override {}
  void observe(Token) override {}
  double next_prob_one() const override { return spec_.tau; }
  std::vector<double> snapshot() const override { return {}; }
  void restore(std::span<const double>) override {}
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<BernPredictor>(*this); }
  std::string name() const override { return "bayes:" + describe(spec_); }
  const CountModel* count_model() const override { return this; }
  double log_prob_counts(Counts prompt, Counts seq) const override;

 private:
  Bern spec_;
};

class BernMixPredictor final : public Predictor, public CountModel {
 public:
  explicit BernMixPredictor(BernMix spec) : spec_(spec) {}

  void reset() override { seen_ = {}; }
  void observe(Token t) override;
  double next_prob_one() const override;
  std::vector<double> snapshot() const override;
  void restore(std::span<const double> state) override;
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<BernMixPredictor>(*this); }
  std::string name() const override { return "bayes:" + describe(spec_); }
  const CountModel* count_model() const override { return this; }
  double log_prob_counts(Counts prompt, Counts seq) const override;
  std::optional<double> log_prob_ratio_counts(Counts a, Counts b, Counts seq) const override;

  // Posterior weight of the tau2 coin given the observed counts.
  double w_post() const { return w_post(seen_); }
  double w_post(Counts c) const;
  Counts seen() const { return seen_; }

 private:
  BernMix spec_;
  Counts seen_;
};

class BetaBernPredictor final : public Predictor, public CountModel {
 public:
  explicit BetaBernPredictor(BetaBern spec) : spec_(spec) {}

  void reset() override { seen_ = {}; }
  void observe(Token t) override;
  double next_prob_one() const override;
  std::vector<double> snapshot() const override;
  void restore(std::span<const double> state) override;
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<BetaBernPredictor>(*this); }
  std::string name() const override { return "bayes:" + describe(spec_); }
  const CountModel* count_model() const override { return this; }
  double log_prob_counts(Counts prompt, Counts seq) const override;

  double alpha_post() const { return spec_.alpha + seen_.ones; }
  double beta_post() const { return spec_.beta + seen_.zeros; }

 private:
  BetaBern spec_;
  Counts seen_;
};

// Bayes predictor of a known switching coin: the history only moves the clock.
class SwitchProcPredictor final : public Predictor {
 public:
  explicit SwitchProcPredictor(SwitchProc spec) : spec_(spec) {}

  void reset() override { position_ = 0; }
  void observe(Token) override { ++position_; }
  double next_prob_one() const override;
  void end_prompt() override { position_ = 0; }
  std::vector<double> snapshot() const override { return {static_cast<double>(position_)}; }
  void restore(std::span<const double> state) override;
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<SwitchProcPredictor>(*this); }
  std::string name() const override { return "bayes:" + describe(spec_); }

 private:
  SwitchProc spec_;
  int position_ = 0;
};

// Posterior over (lambda, eps) after relabelling tokens in (1 - eps) runs so
// that they become i.i.d. Bernoulli(eps). Every segment (the prompt and the
// sequence after it) starts at phase 0.
struct SwitchPosterior {
  std::vector<int> lambdas;
  std::vector<int> flipped_ones;  // per lambda
  int observed = 0;               // tokens seen across all segments
  int position = 0;               // index within the current segment

  void observe(Token t);
  // Normalized P(lambda | history), aligned with `lambdas`.
  std::vector<double> lambda_posterior() const;
  // E[eps | history, lambda_i].
  double eps_mean(std::size_t i) const;
};

class SwitchingPredictor final : public Predictor {
 public:
  explicit SwitchingPredictor(RandomSwitch spec);

  void reset() override;
  void observe(Token t) override { post_.observe(t); }
  double next_prob_one() const override;
  void end_prompt() override { post_.position = 0; }
  std::vector<double> snapshot() const override;
  void restore(std::span<const double> state) override;
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<SwitchingPredictor>(*this); }
  std::string name() const override { return "bayes:" + describe(spec_); }

  const SwitchPosterior& posterior() const { return post_; }

 private:
  RandomSwitch spec_;
  SwitchPosterior post_;
};

std::unique_ptr<Predictor> make_bayes_predictor(const GeneratorSpec& spec);

}  // namespace binprompt
