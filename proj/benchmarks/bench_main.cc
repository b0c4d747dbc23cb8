#include <benchmark/benchmark.h>

#include "binprompt/bandit.h"
#include "binprompt/bayes.h"
#include "binprompt/neural.h"
#include "binprompt/promptopt.h"
#include "binprompt/switching.h"

namespace binprompt {
namespace {

// Non-integer parameters typical of skill-scaled counts.
void BM_BetaGtProb(benchmark::State& state) {
  Rng rng(SeedSpec{1, {}});
  std::vector<std::array<double, 4>> args(256);
  for (auto& a : args) {
    for (double& v : a) v = 0.3 + 20.0 * rng.uniform();
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& a = args[i++ % args.size()];
    benchmark::DoNotOptimize(beta_gt_prob(a[0], a[1], a[2], a[3]));
  }
}
BENCHMARK(BM_BetaGtProb);

void BM_BetaGtProbFast(benchmark::State& state) {
  Rng rng(SeedSpec{1, {}});
  std::vector<std::array<double, 4>> args(256);
  for (auto& a : args) {
    for (double& v : a) v = 0.3 + 20.0 * rng.uniform();
  }
  std::size_t i = 0;
  for (auto _ : state) {
    const auto& a = args[i++ % args.size()];
    benchmark::DoNotOptimize(beta_gt_prob_fast(a[0], a[1], a[2], a[3]));
  }
}
BENCHMARK(BM_BetaGtProbFast);

// Count-class search over every prompt up to the given length.
void BM_CountClassSearch(benchmark::State& state) {
  const int lmax = static_cast<int>(state.range(0));
  BetaBernPredictor pred(BetaBern{1.0, 1.0});
  for (auto _ : state) {
    benchmark::DoNotOptimize(theoretical_optimal(pred, BernMix{0.5, 0.25, 0.75}, 100, PromptConstraint::up_to(lmax)));
  }
}
BENCHMARK(BM_CountClassSearch)->Arg(15)->Arg(50)->Unit(benchmark::kMillisecond);

// Prefix-tree search for the switching predictor.
void BM_SwitchingSearch(benchmark::State& state) {
  const int len = static_cast<int>(state.range(0));
  SwitchingPredictor pred(RandomSwitch{{3, 4, 5}});
  for (auto _ : state) {
    benchmark::DoNotOptimize(theoretical_optimal(pred, SwitchProc{0.0, 3}, 10, PromptConstraint::fixed(len)));
  }
}
BENCHMARK(BM_SwitchingSearch)->Arg(8)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_NeuralStep(benchmark::State& state) {
  ModelConfig m;
  m.torso = static_cast<TorsoKind>(state.range(0));
  const NeuralModel model(m, 3);
  Rng rng(SeedSpec{4, {}});
  const Batch batch = sample_batch(BetaBern{}, 64, 100, rng);
  Eigen::VectorXd grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.loss_and_grad(batch, grad));
  state.SetLabel(to_string(m.torso));
}
BENCHMARK(BM_NeuralStep)
    ->Arg(static_cast<int>(TorsoKind::kRecurrent))
    ->Arg(static_cast<int>(TorsoKind::kLstm))
    ->Arg(static_cast<int>(TorsoKind::kAttention))
    ->Unit(benchmark::kMillisecond);

// 100-step episodes of the grid Bayes policy after a length-4 prompt.
void BM_BanditRollout(benchmark::State& state) {
  const BayesGridPolicy policy{TauGrid(1000, 4.0)};
  const BanditPrompt prompt = BanditPrompt::parse("L0 R1 R1 R1");
  RolloutOptions opts{100, 200, 0, 5, 1};
  for (auto _ : state) benchmark::DoNotOptimize(rollout(policy, prompt, opts));
  state.SetItemsProcessed(state.iterations() * opts.episodes);
}
BENCHMARK(BM_BanditRollout)->Unit(benchmark::kMillisecond);

}  // namespace
}  // namespace binprompt

BENCHMARK_MAIN();
