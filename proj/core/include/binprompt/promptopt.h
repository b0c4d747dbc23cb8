#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "binprompt/bayes.h"
#include "binprompt/generators.h"
#include "binprompt/neural.h"
#include "binprompt/numerics.h"
#include "binprompt/seq.h"

namespace binprompt {

struct PromptConstraint {
  int min_length = 1;
  int max_length = 1;

  static PromptConstraint fixed(int length) { return {length, length}; }
  static PromptConstraint up_to(int max_length, bool include_empty = false) {
    return {include_empty ? 0 : 1, max_length};
  }
};

struct SearchOptions {
  int workers = 1;
  // Keep the loss of every candidate in SearchResult::table.
  bool keep_table = false;
  // Score count classes instead of prompts when the predictor allows it.
  bool use_count_reduction = true;
  std::uint64_t max_candidates = std::uint64_t{1} << 22;
  std::uint64_t max_tree_nodes = std::uint64_t{1} << 24;
};

struct PromptLoss {
  BitSeq prompt;
  Counts counts;
  double loss = 0.0;
};

struct SearchResult {
  // Candidates were count classes; best_prompts then holds one
  // representative (zeros before ones) per class.
  bool by_counts = false;
  std::vector<BitSeq> best_prompts;
  std::vector<Counts> best_counts;
  double best_loss = 0.0;
  // Every candidate in enumeration order when SearchOptions::keep_table is set.
  std::vector<PromptLoss> table;
};

// Losses within this relative distance of the minimum are ties.
inline constexpr double kTieTolerance = 1e-12;

// Sequence with `c.zeros` zeros followed by `c.ones` ones.
BitSeq class_representative(Counts c);

// Exact -sum_x q(x) log pred(x | s) over sequences of length T drawn from the
// task. Uses the count-class reduction when both sides allow it; otherwise
// walks the prefix tree of the task, skipping zero-probability branches.
double expected_log_loss(Predictor& pred, const GeneratorSpec& task, const BitSeq& prompt, int seq_len,
                         const SearchOptions& opts = {});

// Entropy of the task over length-T sequences (the loss of the task's own
// Bayes predictor with no prompt).
double task_entropy(const GeneratorSpec& task, int seq_len, const SearchOptions& opts = {});

SearchResult theoretical_optimal(const Predictor& pred, const GeneratorSpec& task, int seq_len,
                                 PromptConstraint constraint, const SearchOptions& opts = {});

double empirical_log_loss(Predictor& pred, const TaskDataset& data, const BitSeq& prompt);

SearchResult empirical_optimal(const Predictor& pred, const TaskDataset& data, PromptConstraint constraint,
                               const SearchOptions& opts = {});

// Per-sequence counts of a dataset, with multiplicities.
using CountHistogram = std::vector<std::pair<Counts, int>>;

CountHistogram count_histogram(const TaskDataset& data);
// Consumes randomness exactly like sample_dataset with the same stream, so the
// result equals count_histogram(sample_dataset(...)) without materializing it.
CountHistogram sample_count_histogram(const GeneratorSpec& task, int n, int seq_len, Rng& rng);

// Count-class search on a histogram; the predictor must expose a CountModel.
SearchResult empirical_optimal_counts(const Predictor& pred, const CountHistogram& data, PromptConstraint constraint,
                                      const SearchOptions& opts = {});

enum class MatchMode { kCountMatch, kExactMatchAny };

struct CorrectnessCriterion {
  MatchMode mode = MatchMode::kExactMatchAny;
  SearchResult reference;

  bool is_correct(const BitSeq& candidate) const;
  bool is_correct(Counts candidate) const;
};

// Count matching for CIB pretraining generators, exact matching otherwise.
CorrectnessCriterion make_criterion(const GeneratorSpec& pretrain, SearchResult reference);

struct PredictorKind {
  bool neural = false;
  TorsoKind torso = TorsoKind::kLstm;

  static PredictorKind parse(const std::string& text);  // "bayes" or "neural:<torso>"
  std::string str() const;
};

struct PromptSetup {
  GeneratorSpec pretrain;
  GeneratorSpec task;
  int seq_len = 1;
  PromptConstraint constraint;
  int dataset_size = 10;
  PredictorKind predictor;
  ModelConfig model;
  TrainConfig training;
  std::uint64_t seed = 0;
};

struct Proportion {
  double value = 0.0;
  double std_error = 0.0;
  int successes = 0;
  int trials = 0;
};

// Fraction of repetitions whose empirical optimum (on a fresh dataset, and a
// freshly trained network for neural predictors) satisfies the correctness
// criterion against the Bayes predictor's theoretical optimum.
Proportion proportion_correct(const PromptSetup& setup, int repetitions, const SearchOptions& opts = {});

// P(Binomial(N, tau_q) > kappa): probability that the empirical optimum at
// T = 1 is the all-ones prompt of length Lmax rather than length Lmax - 1.
double correct_prob_t1(const BernMix& pretrain, int max_length, int dataset_size, double tau_q);
// The threshold kappa itself, in units of ones in the dataset.
double correct_threshold_t1(const BernMix& pretrain, int max_length, int dataset_size);

struct LandscapeRow {
  BitSeq prompt;
  Counts counts;
  double kl = 0.0;
  int rank = 0;
};

struct LandscapeTable {
  bool by_counts = false;
  std::vector<LandscapeRow> rows;  // sorted by rank
};

// KL from the task to the prompted predictive, for every candidate.
LandscapeTable kl_landscape(const Predictor& pred, const GeneratorSpec& task, int seq_len,
                            PromptConstraint constraint, const SearchOptions& opts = {});

struct TypicalLoss {
  double mean = 0.0;
  double std_error = 0.0;
  double stddev = 0.0;
  int distinct_prompts = 0;
};

// Mean expected loss of length-L prompts sampled from the task itself.
TypicalLoss typical_prompt_loss(const Predictor& pred, const GeneratorSpec& task, int prompt_len, int seq_len,
                                int num_samples, Rng& rng, const SearchOptions& opts = {});

// CSV with columns `S0,S1,loss,rank` (count classes) or `prompt,loss,rank`.
void write_search_csv(std::ostream& os, const SearchResult& result);
void write_landscape_csv(std::ostream& os, const LandscapeTable& table);

}  // namespace binprompt
