#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "binprompt/promptopt.h"
#include "oracles.h"

namespace binprompt {
namespace {

// -sum_x q(x) log p(x | s) with both sides from direct integration.
double brute_loss(const GeneratorSpec& pretrain, const GeneratorSpec& task, const BitSeq& prompt, int seq_len) {
  const double ps = oracle::marginal_prob(pretrain, prompt.tokens());
  double loss = 0.0;
  for (const BitSeq& x : enumerate_sequences(seq_len)) {
    const double q = oracle::marginal_prob(task, x.tokens());
    if (q == 0.0) continue;
    loss -= q * std::log(oracle::joint_prob(pretrain, prompt.tokens(), x.tokens()) / ps);
  }
  return loss;
}

struct Pair {
  GeneratorSpec pretrain;
  GeneratorSpec task;
};

const std::vector<Pair> kPairs = {{BernMix{0.5, 0.2, 0.7}, Bern{0.7}},
                                  {BetaBern{1, 1}, Bern{0.7}},
                                  {BetaBern{1, 2}, BernMix{0.5, 0.25, 0.75}},
                                  {RandomSwitch{{3, 4}}, SwitchProc{0.1, 3}}};

TEST(PromptOpt, ExpectedLossMatchesBruteForce) {
  for (const auto& [p, q] : kPairs) {
    auto pred = make_bayes_predictor(p);
    for (const BitSeq& s : enumerate_prompts_up_to(4, true)) {
      EXPECT_NEAR(expected_log_loss(*pred, q, s, 4), brute_loss(p, q, s, 4), 1e-9) << describe(p) << " " << s;
    }
  }
}

TEST(PromptOpt, CountReductionAgreesWithPrefixTree) {
  SearchOptions tree;
  tree.use_count_reduction = false;
  for (const auto& [p, q] : kPairs) {
    if (!is_cib(p) || !is_cib(q)) continue;
    auto pred = make_bayes_predictor(p);
    for (const BitSeq& s : enumerate_prompts_up_to(5, true)) {
      EXPECT_NEAR(expected_log_loss(*pred, q, s, 8), expected_log_loss(*pred, q, s, 8, tree), 1e-10);
    }
    const auto by_counts = theoretical_optimal(*pred, q, 8, PromptConstraint::up_to(6));
    const auto by_prompts = theoretical_optimal(*pred, q, 8, PromptConstraint::up_to(6), tree);
    EXPECT_TRUE(by_counts.by_counts);
    EXPECT_FALSE(by_prompts.by_counts);
    EXPECT_NEAR(by_counts.best_loss, by_prompts.best_loss, 1e-10);
    for (const auto& best : by_prompts.best_prompts) {
      EXPECT_NE(std::find(by_counts.best_counts.begin(), by_counts.best_counts.end(), counts(best)),
                by_counts.best_counts.end());
    }
  }
}

TEST(PromptOpt, LossNeverBelowTaskEntropy) {
  for (const auto& [p, q] : kPairs) {
    auto pred = make_bayes_predictor(p);
    const double h = task_entropy(q, 5);
    for (const BitSeq& s : enumerate_prompts_up_to(5, true)) {
      EXPECT_GE(expected_log_loss(*pred, q, s, 5), h - 1e-12);
    }
  }
  // The task's own predictor with no prompt attains the entropy.
  auto own = make_bayes_predictor(BernMix{0.5, 0.25, 0.75});
  EXPECT_NEAR(expected_log_loss(*own, BernMix{0.5, 0.25, 0.75}, BitSeq{}, 6), task_entropy(BernMix{0.5, 0.25, 0.75}, 6),
              1e-12);
}

TEST(PromptOpt, TheoreticalOptimumIsBruteForceArgmin) {
  for (const auto& [p, q] : kPairs) {
    auto pred = make_bayes_predictor(p);
    const auto r = theoretical_optimal(*pred, q, 3, PromptConstraint::up_to(5));
    double best = INFINITY;
    for (const BitSeq& s : enumerate_prompts_up_to(5)) best = std::min(best, brute_loss(p, q, s, 3));
    EXPECT_NEAR(r.best_loss, best, 1e-9) << describe(p);
    for (const auto& s : r.best_prompts) EXPECT_NEAR(brute_loss(p, q, s, 3), best, 1e-9);
  }
}

// Task equal to a mixture component: the loss gap between long all-ones
// prompts is second order in the leftover weight, far below the tie
// tolerance of the cross-entropy, but the true order is still strict.
long double mixture_loss_t1(long double zeros, long double ones) {
  const long double w1 = 0.5L * std::pow(0.2L, ones) * std::pow(0.8L, zeros);
  const long double w2 = 0.5L * std::pow(0.7L, ones) * std::pow(0.3L, zeros);
  const long double p1 = (w1 * 0.2L + w2 * 0.7L) / (w1 + w2);
  return -(0.7L * std::log(p1) + 0.3L * std::log(1.0L - p1));
}

TEST(PromptOpt, NearTiesResolvedInFavourOfTheTrueOptimum) {
  ASSERT_GT(std::numeric_limits<long double>::digits, 60);
  BernMixPredictor pred(BernMix{0.5, 0.2, 0.7});
  for (int lmax : {12, 15, 20}) {
    const auto r = theoretical_optimal(pred, Bern{0.7}, 1, PromptConstraint::up_to(lmax));
    ASSERT_EQ(r.best_counts.size(), 1u) << lmax;
    EXPECT_EQ(r.best_counts[0], (Counts{0, lmax}));
    for (const Counts c : enumerate_count_pairs(1, lmax)) {
      if (c == Counts{0, lmax}) continue;
      EXPECT_LT(mixture_loss_t1(0, lmax), mixture_loss_t1(c.zeros, c.ones)) << c.zeros << "," << c.ones;
    }
  }
}

TEST(PromptOpt, ExactTiesSurviveRefinement) {
  // Symmetric mixture and a fair task: every class ties with its mirror.
  BernMixPredictor pred(BernMix{0.5, 0.2, 0.8});
  const auto r = theoretical_optimal(pred, Bern{0.5}, 4, PromptConstraint::up_to(6));
  for (const Counts c : r.best_counts) {
    EXPECT_NE(std::find(r.best_counts.begin(), r.best_counts.end(), Counts{c.ones, c.zeros}), r.best_counts.end());
  }
  const auto shifted = theoretical_optimal(pred, Bern{0.5}, 4, PromptConstraint::fixed(3));
  EXPECT_EQ(shifted.best_counts.size(), 2u);
}

TEST(PromptOpt, ConstraintsAndTable) {
  auto pred = make_bayes_predictor(BetaBern{});
  SearchOptions keep;
  keep.keep_table = true;
  keep.use_count_reduction = false;
  const auto fixed = theoretical_optimal(*pred, Bern{0.7}, 2, PromptConstraint::fixed(3), keep);
  EXPECT_EQ(fixed.table.size(), 8u);
  for (const auto& row : fixed.table) EXPECT_EQ(row.prompt.length(), 3);
  const auto with_empty = theoretical_optimal(*pred, Bern{0.7}, 2, PromptConstraint::up_to(3, true), keep);
  EXPECT_EQ(with_empty.table.size(), 15u);
  EXPECT_TRUE(with_empty.table.front().prompt.empty());
}

// Published optimal prompts: BetaBern(1, beta) pretraining, Bern(0.7) task.
TEST(PromptOpt, BetaBernOptimalPromptTable) {
  struct Row {
    double beta;
    int seq_len, lmax, zeros, ones;
  };
  const std::vector<Row> rows = {{1, 1, 3, 0, 1},   {1, 3, 3, 0, 2},    {1, 5, 3, 1, 2},    {1, 1, 10, 2, 6},
                                 {1, 10, 10, 3, 7}, {1, 3, 12, 3, 8},   {1, 5, 12, 3, 8},   {2, 10, 10, 2, 8},
                                 {2, 100, 20, 5, 15}, {2, 100, 50, 14, 36}};
  for (const auto& r : rows) {
    BetaBernPredictor pred(BetaBern{1.0, r.beta});
    const auto res = theoretical_optimal(pred, Bern{0.7}, r.seq_len, PromptConstraint::up_to(r.lmax));
    ASSERT_EQ(res.best_counts.size(), 1u) << r.beta << " " << r.seq_len << " " << r.lmax;
    EXPECT_EQ(res.best_counts[0], (Counts{r.zeros, r.ones})) << r.beta << " " << r.seq_len << " " << r.lmax;
  }
}

TEST(PromptOpt, EmpiricalCountsAgreeWithSequenceSearch) {
  const GeneratorSpec task = Bern{0.7};
  for (int rep = 0; rep < 5; ++rep) {
    const SeedSpec seed{30, {static_cast<std::uint64_t>(rep)}};
    const TaskDataset data = sample_dataset(task, 25, 6, seed);
    Rng rng(seed);
    const CountHistogram hist = sample_count_histogram(task, 25, 6, rng);
    EXPECT_EQ(hist, count_histogram(data));
    BernMixPredictor pred(BernMix{0.5, 0.2, 0.7});
    SearchOptions seqs;
    seqs.use_count_reduction = false;
    const auto a = empirical_optimal_counts(pred, hist, PromptConstraint::up_to(5));
    const auto b = empirical_optimal(pred, data, PromptConstraint::up_to(5), seqs);
    EXPECT_NEAR(a.best_loss, b.best_loss, 1e-10);
    EXPECT_EQ(a.best_counts.front(), counts(b.best_prompts.front()));
  }
}

TEST(PromptOpt, EmpiricalLossIsDatasetAverage) {
  const TaskDataset data = sample_dataset(Bern{0.6}, 10, 5, SeedSpec{2, {}});
  BetaBernPredictor pred(BetaBern{});
  const BitSeq prompt = BitSeq::parse("011");
  double total = 0.0;
  for (const auto& x : data.sequences) {
    total -= std::log(oracle::marginal_prob(BetaBern{}, oracle::cat(prompt.tokens(), x.tokens())) /
                      oracle::marginal_prob(BetaBern{}, prompt.tokens()));
  }
  EXPECT_NEAR(empirical_log_loss(pred, data, prompt), total / 10.0, 1e-9);
}

// kappa separates the datasets where all-ones of length Lmax beats length
// Lmax - 1; check it against the empirical losses of both prompts.
TEST(PromptOpt, ThresholdAtTOneMatchesDirectComparison) {
  const BernMix mix{0.5, 0.2, 0.7};
  BernMixPredictor pred(mix);
  for (int lmax : {3, 5}) {
    for (int n : {10, 100}) {
      const double kappa = correct_threshold_t1(mix, lmax, n);
      for (int ones = 0; ones <= n; ++ones) {
        TaskDataset d;
        d.seq_len = 1;
        for (int i = 0; i < n; ++i) d.sequences.push_back(BitSeq::repeat(i < ones ? 1 : 0, 1));
        const double longer = empirical_log_loss(pred, d, BitSeq::repeat(1, lmax));
        const double shorter = empirical_log_loss(pred, d, BitSeq::repeat(1, lmax - 1));
        if (std::abs(ones - kappa) > 1e-9) {
          EXPECT_EQ(longer < shorter, ones > kappa) << lmax << " " << n << " " << ones;
        }
      }
    }
  }
}

TEST(PromptOpt, CorrectnessCriteria) {
  BetaBernPredictor pred(BetaBern{});
  const auto ref = theoretical_optimal(pred, Bern{0.7}, 10, PromptConstraint::up_to(10));
  const auto cib = make_criterion(BetaBern{}, ref);
  EXPECT_EQ(cib.mode, MatchMode::kCountMatch);
  ASSERT_EQ(ref.best_counts.size(), 1u);
  const Counts best = ref.best_counts[0];
  // Any ordering of the optimal counts is correct; one token fewer is not.
  const BitSeq ones_first = BitSeq::repeat(1, best.ones).concat(BitSeq::repeat(0, best.zeros));
  const BitSeq zeros_first = BitSeq::repeat(0, best.zeros).concat(BitSeq::repeat(1, best.ones));
  EXPECT_TRUE(cib.is_correct(ones_first));
  EXPECT_TRUE(cib.is_correct(zeros_first));
  EXPECT_TRUE(cib.is_correct(best));
  EXPECT_FALSE(cib.is_correct(Counts{best.zeros + 1, best.ones}));

  SwitchingPredictor sw(RandomSwitch{{3, 4, 5}});
  const auto sref = theoretical_optimal(sw, SwitchProc{0.0, 3}, 6, PromptConstraint::fixed(6));
  const auto exact = make_criterion(RandomSwitch{{3, 4, 5}}, sref);
  EXPECT_EQ(exact.mode, MatchMode::kExactMatchAny);
  for (const auto& s : sref.best_prompts) EXPECT_TRUE(exact.is_correct(s));
  EXPECT_FALSE(exact.is_correct(BitSeq::parse("010101")));
}

TEST(PromptOpt, LandscapeIsRankedAndNonNegative) {
  BetaBernPredictor pred(BetaBern{});
  const auto t = kl_landscape(pred, Bern{0.7}, 10, PromptConstraint::up_to(8));
  ASSERT_EQ(t.rows.size(), 44u);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    EXPECT_EQ(t.rows[i].rank, static_cast<int>(i));
    EXPECT_GE(t.rows[i].kl, -1e-12);
    if (i > 0) {
      EXPECT_LE(t.rows[i - 1].kl, t.rows[i].kl);
    }
  }
  const auto best = theoretical_optimal(pred, Bern{0.7}, 10, PromptConstraint::up_to(8));
  EXPECT_EQ(t.rows.front().counts, best.best_counts.front());
  EXPECT_NEAR(t.rows.front().kl, best.best_loss - task_entropy(Bern{0.7}, 10), 1e-12);
}

TEST(PromptOpt, TypicalPromptsOfADeterministicTask) {
  BetaBernPredictor pred(BetaBern{});
  Rng rng(SeedSpec{6, {}});
  const TypicalLoss t = typical_prompt_loss(pred, Bern{1.0}, 4, 3, 50, rng);
  EXPECT_EQ(t.distinct_prompts, 1);
  EXPECT_EQ(t.std_error, 0.0);
  EXPECT_NEAR(t.mean, expected_log_loss(pred, Bern{1.0}, BitSeq::parse("1111"), 3), 1e-15);
}

TEST(PromptOpt, ProportionCorrectIsReproducibleAndWorkerIndependent) {
  PromptSetup s;
  s.pretrain = BernMix{0.5, 0.2, 0.7};
  s.task = Bern{0.7};
  s.seq_len = 3;
  s.constraint = PromptConstraint::up_to(5);
  s.dataset_size = 50;
  s.seed = 77;
  SearchOptions one, three;
  three.workers = 3;
  const auto a = proportion_correct(s, 200, one);
  const auto b = proportion_correct(s, 200, three);
  EXPECT_EQ(a.successes, b.successes);
  EXPECT_GT(a.value, 0.0);
  EXPECT_LE(a.value, 1.0);
}

TEST(PromptOpt, CsvWriters) {
  BetaBernPredictor pred(BetaBern{});
  SearchOptions keep;
  keep.keep_table = true;
  std::ostringstream os;
  write_search_csv(os, theoretical_optimal(pred, Bern{0.7}, 2, PromptConstraint::up_to(2), keep));
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "S0,S1,loss,rank");
}

}  // namespace
}  // namespace binprompt
