#include <algorithm>
#include <cmath>
#include <sstream>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>
#include <boost/math/special_functions/beta.hpp>
#include <gtest/gtest.h>

#include "binprompt/bandit.h"

namespace binprompt {
namespace {

// Closed form for integer a: sum over i < a of
// B(c + i, b + d) / ((b + i) B(1 + i, b) B(c, d)).
double integer_gt_prob(int a, int b, int c, int d) {
  auto lbeta = [](double x, double y) { return std::lgamma(x) + std::lgamma(y) - std::lgamma(x + y); };
  double total = 0.0;
  for (int i = 0; i < a; ++i) {
    total += std::exp(lbeta(c + i, b + d) - std::log(b + i) - lbeta(1 + i, b) - lbeta(c, d));
  }
  return total;
}

// Double-exponential quadrature of f_X(x) F_Y(x).
double tanh_sinh_gt_prob(double a, double b, double c, double d) {
  const boost::math::beta_distribution<double> x(a, b);
  boost::math::quadrature::tanh_sinh<double> q;
  return q.integrate([&](double t) { return boost::math::pdf(x, t) * boost::math::ibeta(c, d, t); }, 0.0, 1.0, 1e-12);
}

TEST(BetaGtProb, AnalyticExamples) {
  EXPECT_NEAR(beta_gt_prob(1, 1, 1, 1), 0.5, 1e-12);
  EXPECT_NEAR(beta_gt_prob(2, 1, 1, 1), 2.0 / 3.0, 1e-12);
  EXPECT_NEAR(beta_gt_prob_fast(2, 1, 1, 1), 2.0 / 3.0, 1e-9);
  EXPECT_NEAR(integer_gt_prob(2, 1, 1, 1), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(beta_gt_prob(4, 1, 1, 4), integer_gt_prob(4, 1, 1, 4), 1e-10);
  EXPECT_NEAR(beta_gt_prob(4, 1, 1, 4), 69.0 / 70.0, 1e-12);
  EXPECT_THROW(beta_gt_prob(0, 1, 1, 1), std::invalid_argument);
  EXPECT_THROW(beta_gt_prob_fast(1, 1, -1, 1), std::invalid_argument);
}

TEST(BetaGtProb, MatchesIntegerClosedForm) {
  for (int a = 1; a <= 40; a += 3) {
    for (int b = 1; b <= 40; b += 5) {
      for (int c = 1; c <= 40; c += 7) {
        for (int d = 1; d <= 40; d += 4) {
          const double ref = integer_gt_prob(a, b, c, d);
          EXPECT_NEAR(beta_gt_prob(a, b, c, d), ref, 1e-9) << a << " " << b << " " << c << " " << d;
          EXPECT_NEAR(beta_gt_prob_fast(a, b, c, d), ref, 1e-6) << a << " " << b << " " << c << " " << d;
        }
      }
    }
  }
}

// Skill-scaled pseudocounts give non-integer parameters.
TEST(BetaGtProb, MatchesDoubleExponentialQuadrature) {
  Rng rng(SeedSpec{40, {}});
  for (int i = 0; i < 300; ++i) {
    const double tau = rng.uniform();
    auto param = [&] { return 1.0 + tau * static_cast<double>(rng.uniform_int(0, 60)); };
    const double a = param(), b = param(), c = param(), d = param();
    const double ref = tanh_sinh_gt_prob(a, b, c, d);
    EXPECT_NEAR(beta_gt_prob(a, b, c, d), ref, 1e-8) << a << " " << b << " " << c << " " << d;
    EXPECT_NEAR(beta_gt_prob_fast(a, b, c, d), ref, 1e-6) << a << " " << b << " " << c << " " << d;
  }
}

TEST(BetaGtProb, SymmetryComplementAndMonotonicity) {
  Rng rng(SeedSpec{41, {}});
  for (int i = 0; i < 300; ++i) {
    const double a = 0.3 + 50 * rng.uniform(), b = 0.3 + 50 * rng.uniform();
    const double c = 0.3 + 50 * rng.uniform(), d = 0.3 + 50 * rng.uniform();
    const double p = beta_gt_prob(a, b, c, d);
    EXPECT_NEAR(p + beta_gt_prob(c, d, a, b), 1.0, 2e-6);
    // 1 - X ~ Beta(b, a).
    EXPECT_NEAR(p, beta_gt_prob(d, c, b, a), 2e-6) << a << " " << b << " " << c << " " << d;
    EXPECT_GE(beta_gt_prob(a + 1.0, b, c, d), p - 1e-9);
    EXPECT_LE(beta_gt_prob(a, b + 1.0, c, d), p + 1e-9);
    const auto checked = beta_gt_prob_checked(a, b, c, d);
    EXPECT_LT(checked.error, 1e-8) << a << " " << b << " " << c << " " << d;
  }
}

TEST(Skill, PriorMoments) {
  Rng rng(SeedSpec{42, {}});
  RunningStats s;
  int below = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_skill(rng);
    s.add(t);
    below += t < 0.0625;
  }
  EXPECT_NEAR(s.mean(), 0.2, 5 * s.std_error());
  EXPECT_NEAR(below / static_cast<double>(n), 0.5, 0.005);
}

TEST(Skill, AgentProbabilities) {
  SkillAgent fresh{0.7, {}};
  EXPECT_DOUBLE_EQ(fresh.prob_left(), 0.5);
  SkillAgent random{0.0, {{5, 0}, {0, 5}}};
  EXPECT_DOUBLE_EQ(random.prob_left(), 0.5);
  SkillAgent expert{1.0, {{3, 0}, {0, 3}}};
  EXPECT_NEAR(expert.prob_left(), integer_gt_prob(4, 1, 1, 4), 1e-6);
  EXPECT_NEAR(skill_prob_left(1.0, ArmCounts{{3, 0}, {0, 3}}), expert.prob_left(), 0.0);

  Rng rng(SeedSpec{43, {}});
  SkillAgent mid{0.5, {{2, 1}, {1, 3}}};
  int left = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) left += mid.act(rng) == Arm::kLeft;
  const double p = mid.prob_left();
  EXPECT_NEAR(left / static_cast<double>(n), p, 5 * std::sqrt(p * (1 - p) / n));
}

TEST(Trajectory, ZeroSkillActsUniformly) {
  Rng rng(SeedSpec{44, {}});
  TrajectoryOverrides o;
  o.skill = 0.0;
  int left = 0, total = 0;
  for (int i = 0; i < 200; ++i) {
    const auto t = gen_trajectory(rng, 8, 50, o);
    for (const auto& p : t.prompt.pulls) left += p.arm == Arm::kLeft, ++total;
    for (const auto& p : t.rollout) left += p.arm == Arm::kLeft, ++total;
  }
  EXPECT_NEAR(left / static_cast<double>(total), 0.5, 5 * 0.5 / std::sqrt(total));
}

TEST(Trajectory, DeterministicEnvironmentAndCountReset) {
  Rng rng(SeedSpec{45, {}});
  TrajectoryOverrides o;
  o.skill = 1.0;
  o.prompt_env = BanditEnv{1.0, 0.0};
  o.rollout_env = BanditEnv{1.0, 0.0};
  int first_left = 0;
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto t = gen_trajectory(rng, 8, 30, o);
    for (const auto& p : t.rollout) EXPECT_EQ(p.reward, p.arm == Arm::kLeft);
    first_left += t.rollout.front().arm == Arm::kLeft;
    EXPECT_EQ(t.skill, 1.0);
  }
  // With the counts carried over the first rollout pull would almost always
  // be L; after the reset it is a fair coin.
  EXPECT_NEAR(first_left / static_cast<double>(n), 0.5, 5 * 0.5 / std::sqrt(n));
}

TEST(Trajectory, TokenRoundTrips) {
  Rng rng(SeedSpec{46, {}});
  for (int p = 0; p <= 8; ++p) {
    for (int r : {0, 1, 7, 30}) {
      const auto t = gen_trajectory(rng, p, r);
      const auto tokens = encode(t);
      ASSERT_EQ(tokens.size(), static_cast<std::size_t>(2 * p + 1 + 2 * r));
      EXPECT_EQ(tokens[static_cast<std::size_t>(2 * p)], kSeparator);
      const auto back = decode(tokens);
      EXPECT_EQ(back.prompt, t.prompt);
      EXPECT_EQ(back.rollout, t.rollout);

      std::stringstream io;
      write_trajectory(io, t);
      EXPECT_EQ(read_trajectory(io), t);
    }
  }
}

TEST(Trajectory, TrainExampleScoresActionsOnly) {
  Rng rng(SeedSpec{47, {}});
  const auto t = gen_trajectory(rng, 3, 4);
  const auto ex = to_train_example(t);
  const std::vector<std::uint8_t> expected{1, 0, 1, 0, 1, 0, 0, 1, 0, 1, 0, 1, 0, 1, 0};
  EXPECT_EQ(ex.scored, expected);
}

TEST(Prompt, TextAndCode) {
  const auto p = BanditPrompt::parse("L0 R1 R1 R0");
  EXPECT_EQ(p.str(), "L0 R1 R1 R0");
  EXPECT_EQ(p.mirrored().str(), "R0 L1 L1 L0");
  EXPECT_EQ(p.code(), 0b00111110u);
  EXPECT_EQ(BanditPrompt::from_code(p.code(), 4), p);
  for (std::uint64_t code = 0; code < 256; ++code) EXPECT_EQ(BanditPrompt::from_code(code, 4).code(), code);
  EXPECT_THROW(BanditPrompt::parse("L2"), std::invalid_argument);
  EXPECT_THROW(BanditPrompt::parse("X1"), std::invalid_argument);
}

TEST(Wsls, Examples) {
  const auto opt = wsls(BanditPrompt::parse("L0 R1 R1 R1 R1 R1 R1 R0"));
  EXPECT_EQ(opt.win_stay, 1.0);
  EXPECT_EQ(opt.lose_shift, 1.0);
  const auto alt = wsls(BanditPrompt::parse("L1 R1 L1 R1"));
  EXPECT_EQ(alt.win_stay, 0.0);
  EXPECT_FALSE(alt.lose_shift.has_value());
  const auto same = wsls(BanditPrompt::parse("L1 L0 L1 L0"));
  EXPECT_EQ(same.win_stay, 1.0);
  EXPECT_EQ(same.lose_shift, 0.0);
}

TEST(Wsls, FailThenStreakPattern) {
  for (const char* s : {"L0 R1 R1 R0", "L0 R1 R1 R1", "R0 L1 L1 L0", "R0 L1 L1 L1"}) {
    EXPECT_TRUE(is_fail_then_streak(BanditPrompt::parse(s))) << s;
  }
  for (const char* s : {"L1 L1 L1 L1", "L0 R1 R0 R1", "L0 L1 L1 L1", "L0 R0 R1 R1"}) {
    EXPECT_FALSE(is_fail_then_streak(BanditPrompt::parse(s))) << s;
  }
}

TEST(Scripted, PromptsAndDemonstrations) {
  const auto s = scripted_prompts(8);
  EXPECT_EQ(s.max_exploit.str(), "L1 L1 L1 L1 L1 L1 L1 L1");
  EXPECT_EQ(s.max_explore.size(), 8);
  for (int i = 1; i < 8; ++i) EXPECT_NE(s.max_explore.pulls[i].arm, s.max_explore.pulls[i - 1].arm);
  EXPECT_EQ(s.heuristic.size(), 8);
  Rng a(SeedSpec{1, {}}), b(SeedSpec{2, {}});
  bool differ = false;
  for (int i = 0; i < 5 && !differ; ++i) differ = ts_demonstration(8, a) != ts_demonstration(8, b);
  EXPECT_TRUE(differ);
}

TEST(TauGridPrior, WeightsAndMean) {
  const TauGrid g;
  EXPECT_EQ(g.size(), 1000);
  const auto w = g.weights();
  double total = 0.0, mean = 0.0;
  for (int i = 0; i < g.size(); ++i) {
    total += w[i];
    mean += w[i] * g.tau[i];
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
  EXPECT_NEAR(mean, 0.2, 1e-3);
  const TauGrid flat(11, 1.0);
  const auto u = flat.weights();
  EXPECT_NEAR(u[5], 0.1, 1e-12);
  EXPECT_NEAR(u[0], 0.05, 1e-12);
}

std::vector<Pull> random_history(Rng& rng, int n) {
  std::vector<Pull> h(n);
  for (auto& p : h) p = {rng.bernoulli(0.5) ? Arm::kLeft : Arm::kRight, rng.bernoulli(0.6)};
  return h;
}

std::vector<Pull> mirror(std::vector<Pull> h) {
  for (auto& p : h) p.arm = other(p.arm);
  return h;
}

TEST(BanditBayesPosterior, EmptyHistoryAndMirror) {
  EXPECT_DOUBLE_EQ(bayes_action_prob({}), 0.5);
  Rng rng(SeedSpec{48, {}});
  const TauGrid grid(200);
  for (int i = 0; i < 10; ++i) {
    const auto h = random_history(rng, 12);
    EXPECT_NEAR(bayes_action_prob(mirror(h), grid), 1.0 - bayes_action_prob(h, grid), 1e-15);
  }
}

TEST(BanditBayesPosterior, FinalRewardInvarianceIsBitwise) {
  Rng rng(SeedSpec{49, {}});
  for (int i = 0; i < 10; ++i) {
    auto h = random_history(rng, 10);
    BanditBayes a, b;
    BayesGridPolicy pa, pb;
    for (std::size_t t = 0; t + 1 < h.size(); ++t) {
      a.observe(h[t]);
      b.observe(h[t]);
      pa.observe(h[t]);
      pb.observe(h[t]);
    }
    Pull last = h.back();
    a.observe(last);
    pa.observe(last);
    last.reward = !last.reward;
    b.observe(last);
    pb.observe(last);
    EXPECT_EQ(a.posterior().log_weights, b.posterior().log_weights);
    EXPECT_TRUE((pa.posterior() == pb.posterior()).all());
  }
}

TEST(BanditBayesPosterior, CachedPolicyMatchesDirectEvaluation) {
  Rng rng(SeedSpec{50, {}});
  BayesGridPolicy policy;
  for (int i = 0; i < 6; ++i) {
    const auto h = random_history(rng, 16);
    BanditBayes direct;
    policy.reset();
    for (std::size_t t = 0; t < h.size(); ++t) {
      if (t == 6) {
        direct.end_prompt();
        policy.end_prompt();
      }
      EXPECT_NEAR(policy.probs().left, direct.prob_left(), 1e-5);
      direct.observe(h[t]);
      policy.observe(h[t]);
    }
    EXPECT_NEAR(policy.probs().left, direct.prob_left(), 1e-5);
    EXPECT_NEAR(policy.probs().left + policy.probs().right, 1.0, 1e-12);
  }
}

TEST(BanditBayesPosterior, GridRefinementAgrees) {
  Rng rng(SeedSpec{51, {}});
  const TauGrid coarse(1000), fine(4000);
  for (int i = 0; i < 4; ++i) {
    const auto h = random_history(rng, 16);
    EXPECT_NEAR(bayes_action_prob(h, coarse), bayes_action_prob(h, fine), 1e-4);
  }
}

TEST(BanditBayesPosterior, PolicyMirrorIsExact) {
  Rng rng(SeedSpec{52, {}});
  BayesGridPolicy a, b;
  for (const auto& p : random_history(rng, 30)) {
    a.observe(p);
    b.observe({other(p.arm), p.reward});
    EXPECT_EQ(a.probs().left, b.probs().right);
    EXPECT_EQ(a.probs().right, b.probs().left);
  }
}

TEST(Rollouts, ExploitationSanity) {
  BayesGridPolicy policy;
  for (const auto& p : scripted_prompts(4).max_exploit.pulls) policy.observe(p);
  policy.end_prompt();
  Rng rng(SeedSpec{53, {}});
  const BanditEnv env{1.0, 0.0};
  for (int t = 0; t < 100; ++t) {
    const ActionProbs pr = policy.probs();
    // The agent's counts restart at the separator, so the first rollout pull
    // is a fair coin for every skill.
    if (t == 0) {
      ASSERT_NEAR(pr.left, 0.5, 1e-12);
    } else {
      ASSERT_GT(pr.left, 0.5) << "step " << t;
    }
    const Arm a = rng.uniform() * (pr.left + pr.right) < pr.left ? Arm::kLeft : Arm::kRight;
    policy.observe({a, rng.bernoulli(env.value(a))});
  }
}

TEST(Rollouts, RandomPolicyEarnsHalf) {
  RolloutOptions o;
  o.steps = 50;
  o.episodes = 4000;
  o.seed = 3;
  const auto m = rollout(SkillAgentPolicy(0.0), BanditPrompt{}, o);
  EXPECT_NEAR(m.mean_return / 50.0, 0.5, 5 * m.std_error / 50.0);
  for (double r : m.instantaneous_regret) EXPECT_GE(r, 0.0);
}

TEST(Rollouts, ThompsonRegretDecreases) {
  RolloutOptions o;
  o.steps = 300;
  o.episodes = 2000;
  o.seed = 4;
  const auto m = rollout(SkillAgentPolicy(1.0), BanditPrompt{}, o);
  double early = 0, late = 0;
  for (int t = 0; t < 20; ++t) {
    early += m.instantaneous_regret[t];
    late += m.instantaneous_regret[280 + t];
  }
  EXPECT_LT(late, 0.5 * early);
}

TEST(Rollouts, MirrorPromptsScoreIdentically) {
  BayesGridPolicy policy;
  RolloutOptions o;
  o.steps = 40;
  o.episodes = 200;
  o.seed = 5;
  for (const char* s : {"L0 R1 R1 R0", "L1 L0 R1 L1", "R1 R1 L0 L0"}) {
    const auto p = BanditPrompt::parse(s);
    const auto a = rollout(policy, p, o);
    const auto b = rollout(policy, p.mirrored(), o);
    EXPECT_EQ(a.mean_return, b.mean_return) << s;
    EXPECT_EQ(a.std_error, b.std_error) << s;
  }
}

TEST(Rollouts, WorkerCountDoesNotChangeResults) {
  BayesGridPolicy policy;
  RolloutOptions o;
  o.steps = 30;
  o.episodes = 300;
  o.seed = 6;
  const auto p = BanditPrompt::parse("L0 R1");
  const auto a = rollout(policy, p, o);
  o.workers = 3;
  const auto b = rollout(policy, p, o);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_EQ(a.instantaneous_regret, b.instantaneous_regret);
}

TEST(Search, TinySearchIsDeterministicAndBudgeted) {
  BayesGridPolicy policy(TauGrid(200));
  BanditSearchOptions o;
  o.prompt_len = 2;
  o.steps = 20;
  o.episodes = 100;
  o.finalists = 4;
  o.refine_factor = 2;
  o.seed = 9;
  const auto a = prompt_search(policy, o);
  const auto b = prompt_search(policy, o);
  ASSERT_EQ(a.ranked.size(), 16u);
  EXPECT_EQ(a.best.mean, b.best.mean);
  EXPECT_EQ(a.best_prompts, b.best_prompts);
  for (std::size_t i = 1; i < a.ranked.size(); ++i) EXPECT_GE(a.ranked[i - 1].stage1.mean, a.ranked[i].stage1.mean);
  // The top four are refined, plus anything tied with the fourth.
  std::size_t refined = 0;
  while (refined < a.ranked.size() && a.ranked[refined].stage2) ++refined;
  EXPECT_GE(refined, 4u);
  for (std::size_t i = refined; i < a.ranked.size(); ++i) EXPECT_FALSE(a.ranked[i].stage2);
  if (refined < a.ranked.size()) {
    EXPECT_NE(a.ranked[refined].stage1.mean, a.ranked[refined - 1].stage1.mean);
  }
  // Every best prompt's mirror image is also best.
  for (const auto& p : a.best_prompts) {
    EXPECT_NE(std::find(a.best_prompts.begin(), a.best_prompts.end(), p.mirrored()), a.best_prompts.end());
  }

  o.max_pull_budget = 1000;
  EXPECT_THROW(prompt_search(policy, o), BudgetError);
  o.long_run = true;
  EXPECT_NO_THROW(prompt_search(policy, o));
}

TEST(Search, CsvWriters) {
  std::ostringstream os;
  RolloutOptions o;
  o.steps = 5;
  o.episodes = 10;
  const auto p = BanditPrompt::parse("L1 L1");
  write_metrics_csv(os, {{p, rollout(SkillAgentPolicy(1.0), p, o)}});
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')), "prompt,episodes,mean_return,stderr,ws,ls");
}

}  // namespace
}  // namespace binprompt
