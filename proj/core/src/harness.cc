#include "binprompt/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include <Eigen/Core>
#include <boost/version.hpp>

#include "binprompt/mami.h"
#include "binprompt/parallel.h"
#include "binprompt/switching.h"

#ifndef BINPROMPT_VERSION
#define BINPROMPT_VERSION "unknown"
#endif

namespace binprompt {

namespace {

using nlohmann::json;

std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

std::string index_path(const std::string& base, std::size_t i) { return base + "[" + std::to_string(i) + "]"; }

void check_object(const json& j, const std::string& path, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw ConfigError(join_path(path, key), "unknown key");
    }
  }
}

const json* field(const json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

long long int_value(const json& v, const std::string& path, long long lo, long long hi) {
  if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
  const auto x = v.get<long long>();
  if (x < lo || x > hi) {
    throw ConfigError(path, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return x;
}

template <class T>
void read_int(const json& j, const char* key, const std::string& path, T& out, long long lo, long long hi) {
  if (const json* v = field(j, key)) out = static_cast<T>(int_value(*v, join_path(path, key), lo, hi));
}

void read_double(const json& j, const char* key, const std::string& path, double& out, double lo, double hi) {
  if (const json* v = field(j, key)) {
    if (!v->is_number()) throw ConfigError(join_path(path, key), "expected a number");
    out = v->get<double>();
    if (!(out >= lo && out <= hi)) throw ConfigError(join_path(path, key), "out of range");
  }
}

void read_bool(const json& j, const char* key, const std::string& path, bool& out) {
  if (const json* v = field(j, key)) {
    if (!v->is_boolean()) throw ConfigError(join_path(path, key), "expected true or false");
    out = v->get<bool>();
  }
}

std::vector<int> int_list(const json& v, const std::string& path, int lo, int hi) {
  if (!v.is_array()) throw ConfigError(path, "expected a list of integers");
  std::vector<int> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(static_cast<int>(int_value(v[i], index_path(path, i), lo, hi)));
  return out;
}

// Library parsers report problems as std::invalid_argument or json errors;
// attach the field path.
template <class Fn>
auto with_path(const std::string& path, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

SweepAxes parse_sweep(const json& j, const std::string& path) {
  check_object(j, path, {"T", "N", "Lmax", "predictor"});
  SweepAxes s;
  if (const json* v = field(j, "T")) s.seq_lens = int_list(*v, join_path(path, "T"), 1, 100000);
  if (const json* v = field(j, "N")) s.dataset_sizes = int_list(*v, join_path(path, "N"), 1, 100000000);
  if (const json* v = field(j, "Lmax")) s.max_lengths = int_list(*v, join_path(path, "Lmax"), 0, 100000);
  if (const json* v = field(j, "predictor")) {
    const std::string p = join_path(path, "predictor");
    if (!v->is_array()) throw ConfigError(p, "expected a list of predictor names");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const auto& e = (*v)[i];
      if (!e.is_string()) throw ConfigError(index_path(p, i), "expected a string");
      s.predictors.push_back(with_path(index_path(p, i), [&] { return PredictorKind::parse(e.get<std::string>()); }));
    }
  }
  return s;
}

SwitchingSettings parse_switching(const json& j, const std::string& path) {
  check_object(j, path, {"lambdas", "tasks", "typical_lengths", "typical_samples", "decode_samples", "decode_max_eps",
                         "decode_length"});
  SwitchingSettings s;
  if (const json* v = field(j, "lambdas")) s.lambdas = int_list(*v, join_path(path, "lambdas"), 1, 1000);
  if (s.lambdas.empty()) throw ConfigError(join_path(path, "lambdas"), "must not be empty");
  if (const json* v = field(j, "tasks")) {
    const std::string p = join_path(path, "tasks");
    if (!v->is_array()) throw ConfigError(p, "expected a list of {eps, lambda} objects");
    for (std::size_t i = 0; i < v->size(); ++i) {
      const std::string ip = index_path(p, i);
      check_object((*v)[i], ip, {"eps", "lambda"});
      SwitchProc task;
      read_double((*v)[i], "eps", ip, task.eps, 0.0, 1.0);
      read_int((*v)[i], "lambda", ip, task.lambda, 1, 1000);
      s.tasks.push_back(task);
    }
  }
  if (const json* v = field(j, "typical_lengths")) {
    s.typical_lengths = int_list(*v, join_path(path, "typical_lengths"), 0, 100000);
  }
  read_int(j, "typical_samples", path, s.typical_samples, 1, 100000000);
  read_int(j, "decode_samples", path, s.decode_samples, 0, 100000000);
  read_double(j, "decode_max_eps", path, s.decode_max_eps, 0.0, 1.0);
  read_int(j, "decode_length", path, s.decode_length, 1, 100000);
  return s;
}

BanditSettings parse_bandit(const json& j, const std::string& path) {
  check_object(j, path, {"prompt_len", "steps", "episodes", "finalists", "refine_factor", "max_pull_budget",
                         "grid_points", "skill_exponent", "comparison_episodes"});
  BanditSettings s;
  read_int(j, "prompt_len", path, s.search.prompt_len, 0, 16);
  read_int(j, "steps", path, s.search.steps, 1, 100000);
  read_int(j, "episodes", path, s.search.episodes, 2, 1000000000);
  read_int(j, "finalists", path, s.search.finalists, 0, 1 << 20);
  read_int(j, "refine_factor", path, s.search.refine_factor, 1, 100000);
  read_double(j, "max_pull_budget", path, s.search.max_pull_budget, 1.0, 1e18);
  read_int(j, "grid_points", path, s.grid_points, 2, 100000);
  read_double(j, "skill_exponent", path, s.skill_exponent, 1e-3, 1e3);
  read_int(j, "comparison_episodes", path, s.comparison_episodes, 0, 1000000000);
  return s;
}

MamiSettings parse_mami(const json& j, const std::string& path) {
  check_object(j, path, {"instances", "latents", "max_prompts", "max_sequences", "random_strategies"});
  MamiSettings s;
  read_int(j, "instances", path, s.instances, 0, 1000000);
  if (const json* v = field(j, "latents")) s.latents = int_list(*v, join_path(path, "latents"), 1, 64);
  if (s.latents.empty()) throw ConfigError(join_path(path, "latents"), "must not be empty");
  read_int(j, "max_prompts", path, s.max_prompts, 1, 1000);
  read_int(j, "max_sequences", path, s.max_sequences, 1, 1000);
  read_int(j, "random_strategies", path, s.random_strategies, 0, 100000000);
  return s;
}

// Exponentiation that saturates instead of overflowing.
double pow2(int n) { return std::ldexp(1.0, std::min(n, 1000)); }

bool deterministic_task(const GeneratorSpec& task) {
  if (const auto* b = std::get_if<Bern>(&task)) return b->tau == 0.0 || b->tau == 1.0;
  if (const auto* s = std::get_if<SwitchProc>(&task)) return s->eps == 0.0 || s->eps == 1.0;
  return false;
}

double tree_nodes(const GeneratorSpec& task, int seq_len) {
  return deterministic_task(task) ? seq_len + 1.0 : pow2(seq_len + 1);
}

bool reducible(const ExperimentConfig& c, const PredictorKind& p, const GeneratorSpec& task) {
  return !p.neural && is_cib(c.pretrain) && is_cib(task);
}

PromptConstraint constraint_for(const ExperimentConfig& c, int max_length) {
  return c.fixed_length ? PromptConstraint::fixed(max_length) : PromptConstraint::up_to(max_length, c.include_empty);
}

double prompt_candidates(const ExperimentConfig& c, int max_length, bool by_counts) {
  const PromptConstraint k = constraint_for(c, max_length);
  if (by_counts) {
    const double hi = (k.max_length + 1.0) * (k.max_length + 2.0) / 2.0;
    const double lo = k.min_length * (k.min_length + 1.0) / 2.0;
    return hi - lo;
  }
  return pow2(k.max_length + 1) - pow2(k.min_length);
}

// Relative cost of one network step against one closed-form update.
constexpr double kNeuralStepCost = 50.0;

double training_cost(const ExperimentConfig& c, int seq_len) {
  return kNeuralStepCost * c.training.steps * static_cast<double>(c.training.batch_size) * seq_len;
}

std::string coords_text(const std::vector<std::pair<std::string, std::string>>& coords) {
  std::string out;
  for (const auto& [k, v] : coords) {
    if (!out.empty()) out += ' ';
    out += k + "=" + v;
  }
  return out.empty() ? "<single cell>" : out;
}

std::string num(double v) { return format_number(v); }

struct RowBuilder {
  const ExperimentConfig& config;
  std::uint64_t seed;

  ResultRow operator()(const std::map<std::string, std::string>& coords, std::string metric, double value,
                       double se = 0.0) const {
    ResultRow r;
    for (const auto& name : coord_columns(config.kind)) {
      const auto it = coords.find(name);
      r.coords.emplace_back(name, it == coords.end() ? "" : it->second);
    }
    r.metric = std::move(metric);
    r.value = value;
    r.std_error = se;
    r.seed = seed;
    return r;
  }
};

std::shared_ptr<NeuralModel> train_for_cell(const ExperimentConfig& c, const GeneratorSpec& spec, TorsoKind torso,
                                            int seq_len, std::uint64_t seed) {
  ModelConfig m = c.model;
  m.torso = torso;
  m.max_seq_len = std::max(m.max_seq_len, seq_len + 64);
  TrainConfig t = c.training;
  t.seed = seed;
  return train(spec, m, t).model;
}

std::unique_ptr<Predictor> cell_predictor(const ExperimentConfig& c, const Cell& cell) {
  if (!cell.predictor.neural) return make_bayes_predictor(c.pretrain);
  const int longest = c.training.seq_len + cell.max_length;
  return std::make_unique<NeuralPredictor>(
      train_for_cell(c, c.pretrain, cell.predictor.torso, longest, SeedSpec{cell.seed, {}}.child(1).key()));
}

SearchOptions search_options(const ExperimentConfig& c, int workers) {
  SearchOptions o;
  o.workers = workers;
  if (c.long_run) {
    o.max_candidates = std::uint64_t{1} << 30;
    o.max_tree_nodes = std::uint64_t{1} << 28;
  }
  return o;
}

std::vector<ResultRow> run_search(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  auto pred = cell_predictor(c, cell);
  const SearchOptions opts = search_options(c, workers);
  const SearchResult r = theoretical_optimal(*pred, c.task, cell.seq_len, constraint_for(c, cell.max_length), opts);
  const double h = task_entropy(c.task, cell.seq_len, opts);
  std::map<std::string, std::string> base{
      {"T", std::to_string(cell.seq_len)}, {"Lmax", std::to_string(cell.max_length)}, {"predictor", cell.predictor.str()}};
  std::vector<ResultRow> rows;
  rows.push_back(row(base, "task_entropy", h));
  for (std::size_t i = 0; i < r.best_prompts.size(); ++i) {
    auto at = base;
    const Counts k = counts(r.best_prompts[i]);
    at["prompt"] = r.by_counts ? "" : r.best_prompts[i].str();
    at["S0"] = std::to_string(k.zeros);
    at["S1"] = std::to_string(k.ones);
    rows.push_back(row(at, "optimal_loss", r.best_loss));
    rows.push_back(row(at, "optimal_kl", r.best_loss - h));
  }
  return rows;
}

std::vector<ResultRow> run_landscape(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  auto pred = cell_predictor(c, cell);
  const LandscapeTable t =
      kl_landscape(*pred, c.task, cell.seq_len, constraint_for(c, cell.max_length), search_options(c, workers));
  std::vector<ResultRow> rows;
  rows.reserve(t.rows.size());
  for (const auto& r : t.rows) {
    rows.push_back(row({{"T", std::to_string(cell.seq_len)},
                        {"Lmax", std::to_string(cell.max_length)},
                        {"predictor", cell.predictor.str()},
                        {"prompt", t.by_counts ? "" : r.prompt.str()},
                        {"S0", std::to_string(r.counts.zeros)},
                        {"S1", std::to_string(r.counts.ones)},
                        {"rank", std::to_string(r.rank)}},
                       "kl", r.kl));
  }
  return rows;
}

std::vector<ResultRow> run_proportion(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  PromptSetup setup;
  setup.pretrain = c.pretrain;
  setup.task = c.task;
  setup.seq_len = cell.seq_len;
  setup.constraint = constraint_for(c, cell.max_length);
  setup.dataset_size = cell.dataset_size;
  setup.predictor = cell.predictor;
  setup.model = c.model;
  setup.model.max_seq_len = std::max(setup.model.max_seq_len, c.training.seq_len + cell.max_length + 64);
  setup.training = c.training;
  setup.seed = cell.seed;
  const Proportion p = proportion_correct(setup, c.repetitions, search_options(c, workers));
  const std::map<std::string, std::string> at{{"T", std::to_string(cell.seq_len)},
                                              {"N", std::to_string(cell.dataset_size)},
                                              {"Lmax", std::to_string(cell.max_length)},
                                              {"predictor", cell.predictor.str()}};
  std::vector<ResultRow> rows{row(at, "proportion_correct", p.value, p.std_error)};
  const auto* mix = std::get_if<BernMix>(&c.pretrain);
  const auto* coin = std::get_if<Bern>(&c.task);
  if (cell.seq_len == 1 && mix && coin && !cell.predictor.neural && !c.fixed_length && !c.include_empty) {
    rows.push_back(row(at, "theory_t1", correct_prob_t1(*mix, cell.max_length, cell.dataset_size, coin->tau)));
  }
  return rows;
}

std::vector<ResultRow> run_train(const ExperimentConfig& c, const Cell& cell, int) {
  const RowBuilder row{c, cell.seed};
  ModelConfig m = c.model;
  m.torso = cell.predictor.torso;
  m.max_seq_len = std::max(m.max_seq_len, c.training.seq_len + 1);
  TrainConfig t = c.training;
  t.seed = SeedSpec{cell.seed, {}}.child(1).key();
  const TrainResult trained = train(c.pretrain, m, t);
  const std::string name = cell.predictor.str();
  std::vector<ResultRow> rows;
  for (const auto& p : trained.trace) rows.push_back(row({{"predictor", name}, {"step", std::to_string(p.step)}}, "train_loss", p.loss));

  Rng rng(SeedSpec{cell.seed, {}}.child(2));
  const Batch probe = sample_batch(c.pretrain, 2, std::min(c.training.seq_len, 8), rng);
  NeuralModel small = *trained.model;
  rows.push_back(row({{"predictor", name}}, "grad_check", grad_check(small, probe)));

  NeuralPredictor model(trained.model);
  auto bayes = make_bayes_predictor(c.pretrain);
  const MeanStderr kl = eval_kl_vs_bayes(model, *bayes, c.pretrain, c.eval_sequences, c.training.seq_len, rng);
  rows.push_back(row({{"predictor", name}, {"step", std::to_string(c.training.steps)}}, "eval_kl_vs_bayes", kl.mean,
                     kl.std_error));
  return rows;
}

std::vector<ResultRow> run_switching(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  const auto& sw = c.switching;
  std::vector<ResultRow> rows;
  if (cell.item < 0) {
    Rng rng(SeedSpec{cell.seed, {}});
    int hits = 0;
    for (int i = 0; i < sw.decode_samples; ++i) {
      const double eps = rng.uniform() * sw.decode_max_eps;
      const int lambda = sw.lambdas[static_cast<std::size_t>(rng.uniform_int(0, std::ssize(sw.lambdas) - 1))];
      const BitSeq prompt = sample_sequence(SwitchProc{eps, lambda}, sw.decode_length, rng);
      hits += heuristic_decode(prompt, sw.lambdas).lambda == lambda;
    }
    const double n = std::max(sw.decode_samples, 1);
    const double acc = hits / n;
    rows.push_back(row({{"eps", num(sw.decode_max_eps)}, {"prompt_len", std::to_string(sw.decode_length)}},
                       "decode_accuracy", acc, std::sqrt(acc * (1.0 - acc) / n)));
    return rows;
  }

  const SwitchProc task = sw.tasks[static_cast<std::size_t>(cell.item)];
  SwitchingPredictor pred(RandomSwitch{sw.lambdas});
  const SearchOptions opts = search_options(c, workers);
  const PromptConstraint k = constraint_for(c, cell.max_length);
  const SearchResult best = theoretical_optimal(pred, task, cell.seq_len, k, opts);
  std::map<std::string, std::string> base{{"T", std::to_string(cell.seq_len)},
                                          {"Lmax", std::to_string(cell.max_length)},
                                          {"eps", num(task.eps)},
                                          {"lambda", std::to_string(task.lambda)}};
  rows.push_back(row(base, "task_entropy", task_entropy(task, cell.seq_len, opts)));
  for (const auto& prompt : best.best_prompts) {
    auto at = base;
    at["prompt"] = prompt.str();
    at["prompt_len"] = std::to_string(prompt.length());
    rows.push_back(row(at, "optimal_loss", best.best_loss));
    const LatentEstimate map = map_latent(posterior_after(sw.lambdas, prompt));
    rows.push_back(row(at, "map_lambda", map.lambda));
    rows.push_back(row(at, "map_eps", map.eps));
    const LatentEstimate heur = heuristic_decode(prompt, sw.lambdas);
    rows.push_back(row(at, "heuristic_lambda", heur.lambda));
    rows.push_back(row(at, "heuristic_phase", heur.phase));
    rows.push_back(row(at, "heuristic_eps", heur.eps));
  }
  for (int len : sw.typical_lengths) {
    Rng rng(SeedSpec{cell.seed, {}}.child(static_cast<std::uint64_t>(len)));
    const TypicalLoss t = typical_prompt_loss(pred, task, len, cell.seq_len, sw.typical_samples, rng, opts);
    auto at = base;
    at["prompt_len"] = std::to_string(len);
    rows.push_back(row(at, "typical_loss", t.mean, t.std_error));
  }
  return rows;
}

std::vector<ResultRow> run_bandit(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  const auto& b = c.bandit;
  std::unique_ptr<ActionPolicy> policy;
  if (cell.predictor.neural) {
    ModelConfig m = c.model;
    m.torso = cell.predictor.torso;
    m.vocab = 3;
    const int rollout_len = b.search.steps;
    const int prompt_len = std::max(b.search.prompt_len, 1);
    m.max_seq_len = std::max(m.max_seq_len, 2 * (prompt_len + rollout_len) + 2);
    TrainConfig t = c.training;
    t.seed = SeedSpec{cell.seed, {}}.child(1).key();
    auto sampler = [&](int batch, Rng& rng) { return sample_bandit_batch(batch, prompt_len, rollout_len, rng); };
    policy = std::make_unique<NeuralActionPolicy>(train_model(m, t, sampler).model);
  } else {
    policy = std::make_unique<BayesGridPolicy>(TauGrid(b.grid_points, b.skill_exponent));
  }

  BanditSearchOptions so = b.search;
  so.seed = cell.seed;
  so.workers = workers;
  so.long_run = c.long_run;
  const BanditSearchResult found = prompt_search(*policy, so);
  const std::string name = cell.predictor.str();
  std::vector<ResultRow> rows;
  for (const auto& v : found.ranked) {
    const std::map<std::string, std::string> at{{"predictor", name}, {"prompt_type", "searched"}, {"prompt", v.prompt.str()}};
    rows.push_back(row(at, "stage1_return", v.stage1.mean, v.stage1.std_error));
    if (v.stage2) rows.push_back(row(at, "stage2_return", v.stage2->mean, v.stage2->std_error));
  }
  if (b.comparison_episodes <= 0) return rows;

  RolloutOptions ro;
  ro.steps = b.search.steps;
  ro.episodes = b.comparison_episodes;
  ro.seed = SeedSpec{cell.seed, {}}.child(2).key();
  ro.workers = workers;
  const ScriptedPrompts scripted = scripted_prompts(b.search.prompt_len);
  std::vector<std::pair<std::string, BanditPrompt>> fixed{{"optimal", found.best_prompts.front()},
                                                           {"max_explore", scripted.max_explore},
                                                           {"max_exploit", scripted.max_exploit},
                                                           {"heuristic", scripted.heuristic}};
  auto emit = [&](const std::string& type, const std::string& prompt, const BehaviorMetrics& m) {
    const std::map<std::string, std::string> at{{"predictor", name}, {"prompt_type", type}, {"prompt", prompt}};
    rows.push_back(row(at, "mean_return", m.mean_return, m.std_error));
    if (m.ws) rows.push_back(row(at, "win_stay", *m.ws));
    if (m.ls) rows.push_back(row(at, "lose_shift", *m.ls));
    for (std::size_t s = 0; s < m.instantaneous_regret.size(); ++s) {
      auto st = at;
      st["step"] = std::to_string(s);
      rows.push_back(row(st, "regret", m.instantaneous_regret[s]));
    }
  };
  for (const auto& [type, prompt] : fixed) emit(type, prompt.str(), rollout(*policy, prompt, ro));
  emit("ts_demo", "", rollout_demonstrations(*policy, b.search.prompt_len, ro));
  return rows;
}

std::vector<ResultRow> run_mami(const ExperimentConfig& c, const Cell& cell, int workers) {
  const RowBuilder row{c, cell.seed};
  const auto& m = c.mami;
  Rng rng(SeedSpec{cell.seed, {}});
  const int latents = m.latents[static_cast<std::size_t>(cell.item) % m.latents.size()];
  const int prompts = static_cast<int>(rng.uniform_int(1, m.max_prompts));
  const int sequences = static_cast<int>(rng.uniform_int(1, m.max_sequences));
  const FiniteJoint j = random_finite_joint(latents, prompts, sequences, rng);
  const PropositionCheck check = verify_proposition(j, rng, m.random_strategies, 1e-10, workers);
  const std::map<std::string, std::string> at{{"instance", std::to_string(cell.item)},
                                              {"latents", std::to_string(latents)},
                                              {"prompts", std::to_string(prompts)},
                                              {"sequences", std::to_string(sequences)}};
  return {row(at, "form_gap", std::abs(mami(j) - mami_cross_entropy_form(j))),
          row(at, "proposition_holds", check.holds ? 1.0 : 0.0),
          row(at, "witness_value", check.witness_value),
          row(at, "best_deterministic", check.best_deterministic),
          row(at, "best_random", check.best_random),
          row(at, "deterministic_checked", static_cast<double>(check.deterministic_checked))};
}

std::vector<ResultRow> run_cell(const ExperimentConfig& c, const Cell& cell, int workers) {
  switch (c.kind) {
    case ExperimentKind::kSearch:
      return run_search(c, cell, workers);
    case ExperimentKind::kLandscape:
      return run_landscape(c, cell, workers);
    case ExperimentKind::kProportion:
      return run_proportion(c, cell, workers);
    case ExperimentKind::kTrain:
      return run_train(c, cell, workers);
    case ExperimentKind::kSwitching:
      return run_switching(c, cell, workers);
    case ExperimentKind::kBandit:
      return run_bandit(c, cell, workers);
    case ExperimentKind::kMamiCheck:
      return run_mami(c, cell, workers);
  }
  return {};
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

ConfigError::ConfigError(const std::string& path, const std::string& what)
    : std::runtime_error(path + ": " + what), path_(path) {}

std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSearch:
      return "search";
    case ExperimentKind::kLandscape:
      return "landscape";
    case ExperimentKind::kProportion:
      return "proportion";
    case ExperimentKind::kTrain:
      return "train";
    case ExperimentKind::kSwitching:
      return "switching";
    case ExperimentKind::kBandit:
      return "bandit";
    case ExperimentKind::kMamiCheck:
      return "mami-check";
  }
  return "?";
}

ExperimentKind parse_kind(const std::string& name) {
  for (auto k : {ExperimentKind::kSearch, ExperimentKind::kLandscape, ExperimentKind::kProportion, ExperimentKind::kTrain,
                 ExperimentKind::kSwitching, ExperimentKind::kBandit, ExperimentKind::kMamiCheck}) {
    if (to_string(k) == name) return k;
  }
  throw ConfigError("kind", "unknown experiment kind '" + name +
                                "' (expected search, landscape, proportion, train, switching, bandit or mami-check)");
}

ExperimentConfig parse_config(const json& doc) {
  check_object(doc, "", {"name", "kind", "seed", "output_dir", "max_cell_cost", "pretrain", "task", "include_empty",
                         "fixed_length", "repetitions", "eval_sequences", "sweep", "model", "training", "switching",
                         "bandit", "mami"});
  ExperimentConfig c;
  c.source = doc;
  const json* name = field(doc, "name");
  if (!name || !name->is_string() || name->get<std::string>().empty()) {
    throw ConfigError("name", "required non-empty string");
  }
  c.name = name->get<std::string>();
  if (c.name.find_first_of("/\\") != std::string::npos) throw ConfigError("name", "must not contain path separators");
  const json* kind = field(doc, "kind");
  if (!kind || !kind->is_string()) throw ConfigError("kind", "required string");
  c.kind = parse_kind(kind->get<std::string>());
  if (const json* v = field(doc, "seed")) {
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
      throw ConfigError("seed", "expected a non-negative integer");
    }
    c.seed = v->get<std::uint64_t>();
  }
  if (const json* v = field(doc, "output_dir")) {
    if (!v->is_string()) throw ConfigError("output_dir", "expected a string");
    c.output_dir = v->get<std::string>();
  }
  read_double(doc, "max_cell_cost", "", c.max_cell_cost, 1.0, 1e30);
  if (const json* v = field(doc, "pretrain")) c.pretrain = with_path("pretrain", [&] { return parse_generator(*v); });
  if (const json* v = field(doc, "task")) c.task = with_path("task", [&] { return parse_generator(*v); });
  read_bool(doc, "include_empty", "", c.include_empty);
  read_bool(doc, "fixed_length", "", c.fixed_length);
  read_int(doc, "repetitions", "", c.repetitions, 1, 100000000);
  read_int(doc, "eval_sequences", "", c.eval_sequences, 1, 100000000);
  if (const json* v = field(doc, "sweep")) c.sweep = parse_sweep(*v, "sweep");
  if (const json* v = field(doc, "model")) {
    with_path("model", [&] {
      from_json(*v, c.model);
      return 0;
    });
  }
  if (const json* v = field(doc, "training")) {
    with_path("training", [&] {
      from_json(*v, c.training);
      return 0;
    });
  }
  if (const json* v = field(doc, "switching")) c.switching = parse_switching(*v, "switching");
  if (const json* v = field(doc, "bandit")) c.bandit = parse_bandit(*v, "bandit");
  if (const json* v = field(doc, "mami")) c.mami = parse_mami(*v, "mami");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string(), "cannot open config file");
  json doc;
  try {
    doc = json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
  }
  return parse_config(doc);
}

std::uint64_t fnv1a(std::string_view bytes, std::uint64_t basis) {
  std::uint64_t h = basis;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_hash(const ExperimentConfig& config) {
  std::string text = config.source.dump();
  text += "|seed=" + (config.seed ? std::to_string(*config.seed) : std::string("none"));
  return hex64(fnv1a(text));
}

std::vector<std::string> coord_columns(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::kSearch:
      return {"T", "Lmax", "predictor", "prompt", "S0", "S1"};
    case ExperimentKind::kLandscape:
      return {"T", "Lmax", "predictor", "prompt", "S0", "S1", "rank"};
    case ExperimentKind::kProportion:
      return {"T", "N", "Lmax", "predictor"};
    case ExperimentKind::kTrain:
      return {"predictor", "step"};
    case ExperimentKind::kSwitching:
      return {"T", "Lmax", "eps", "lambda", "prompt_len", "prompt"};
    case ExperimentKind::kBandit:
      return {"predictor", "prompt_type", "prompt", "step"};
    case ExperimentKind::kMamiCheck:
      return {"instance", "latents", "prompts", "sequences"};
  }
  return {};
}

std::vector<Cell> expand_cells(const ExperimentConfig& c) {
  std::vector<Cell> cells;
  const std::uint64_t root = c.seed.value_or(0);
  auto add = [&](Cell cell) {
    cell.seed = SeedSpec{root, {}}.child(fnv1a(coords_text(cell.coords))).key();
    cells.push_back(std::move(cell));
  };
  const auto& s = c.sweep;
  switch (c.kind) {
    case ExperimentKind::kSearch:
    case ExperimentKind::kLandscape:
      for (int t : s.seq_lens) {
        for (int l : s.max_lengths) {
          for (const auto& p : s.predictors) {
            Cell cell;
            cell.coords = {{"T", std::to_string(t)}, {"Lmax", std::to_string(l)}, {"predictor", p.str()}};
            cell.seq_len = t;
            cell.max_length = l;
            cell.predictor = p;
            const bool by_counts = reducible(c, p, c.task);
            const double per = by_counts ? t + 1.0 : tree_nodes(c.task, t) * (p.neural ? kNeuralStepCost : 1.0);
            cell.cost = prompt_candidates(c, l, by_counts) * per + (p.neural ? training_cost(c, c.training.seq_len) : 0.0);
            add(std::move(cell));
          }
        }
      }
      break;
    case ExperimentKind::kProportion:
      for (int t : s.seq_lens) {
        for (int n : s.dataset_sizes) {
          for (int l : s.max_lengths) {
            for (const auto& p : s.predictors) {
              Cell cell;
              cell.coords = {{"T", std::to_string(t)},
                             {"N", std::to_string(n)},
                             {"Lmax", std::to_string(l)},
                             {"predictor", p.str()}};
              cell.seq_len = t;
              cell.dataset_size = n;
              cell.max_length = l;
              cell.predictor = p;
              const bool by_counts = reducible(c, p, c.task);
              const double data = static_cast<double>(n) * t;
              const double per_rep =
                  by_counts ? data + prompt_candidates(c, l, true) * std::min<double>(n, t + 1.0)
                            : data + prompt_candidates(c, l, false) * std::min(data, tree_nodes(c.task, t)) *
                                         (p.neural ? kNeuralStepCost : 1.0) +
                                  (p.neural ? training_cost(c, c.training.seq_len) : 0.0);
              cell.cost = c.repetitions * per_rep;
              add(std::move(cell));
            }
          }
        }
      }
      break;
    case ExperimentKind::kTrain:
      for (const auto& p : s.predictors) {
        Cell cell;
        cell.coords = {{"predictor", p.str()}};
        cell.predictor = p;
        cell.seq_len = c.training.seq_len;
        cell.cost = training_cost(c, c.training.seq_len) +
                    kNeuralStepCost * static_cast<double>(c.eval_sequences) * c.training.seq_len;
        add(std::move(cell));
      }
      break;
    case ExperimentKind::kSwitching: {
      const auto& sw = c.switching;
      for (int t : s.seq_lens) {
        for (int l : s.max_lengths) {
          for (std::size_t i = 0; i < sw.tasks.size(); ++i) {
            Cell cell;
            cell.coords = {{"T", std::to_string(t)},
                           {"Lmax", std::to_string(l)},
                           {"eps", num(sw.tasks[i].eps)},
                           {"lambda", std::to_string(sw.tasks[i].lambda)}};
            cell.seq_len = t;
            cell.max_length = l;
            cell.item = static_cast<int>(i);
            const double tree = tree_nodes(sw.tasks[i], t);
            const double lengths = static_cast<double>(sw.typical_lengths.size());
            cell.cost = prompt_candidates(c, l, false) * tree + lengths * sw.typical_samples * tree;
            add(std::move(cell));
          }
        }
      }
      if (sw.decode_samples > 0) {
        Cell cell;
        cell.coords = {{"decode", std::to_string(sw.decode_length)}};
        cell.item = -1;
        cell.cost = static_cast<double>(sw.decode_samples) * sw.decode_length * 2.0 * sw.lambdas.size() * 10.0;
        add(std::move(cell));
      }
      break;
    }
    case ExperimentKind::kBandit: {
      const std::vector<PredictorKind> preds = s.predictors.empty() ? std::vector<PredictorKind>{{}} : s.predictors;
      for (const auto& p : preds) {
        Cell cell;
        cell.coords = {{"predictor", p.str()}};
        cell.predictor = p;
        const auto& b = c.bandit.search;
        const double prompts = pow2(2 * b.prompt_len);
        cell.cost = (prompts * b.episodes + static_cast<double>(b.finalists) * b.episodes * b.refine_factor) * b.steps;
        add(std::move(cell));
      }
      break;
    }
    case ExperimentKind::kMamiCheck:
      for (int i = 0; i < c.mami.instances; ++i) {
        Cell cell;
        cell.coords = {{"instance", std::to_string(i)}};
        cell.item = i;
        const int latents = *std::max_element(c.mami.latents.begin(), c.mami.latents.end());
        cell.cost = std::pow(static_cast<double>(c.mami.max_prompts), latents) * c.mami.max_prompts *
                    c.mami.max_sequences * latents;
        add(std::move(cell));
      }
      break;
  }
  return cells;
}

ValidationReport validate(const ExperimentConfig& c) {
  ValidationReport r;
  if (!c.seed) r.errors.push_back("seed: missing; set it in the config or pass --seed");
  for (const auto& p : c.sweep.predictors) {
    if (c.kind == ExperimentKind::kTrain && !p.neural) {
      r.errors.push_back("sweep.predictor: train experiments need neural:<torso> predictors");
    }
    if (c.kind == ExperimentKind::kSwitching && p.neural) {
      r.errors.push_back("sweep.predictor: switching experiments use the Bayes predictor only");
    }
  }
  if (c.kind == ExperimentKind::kSwitching) {
    for (std::size_t i = 0; i < c.switching.tasks.size(); ++i) {
      if (std::find(c.switching.lambdas.begin(), c.switching.lambdas.end(), c.switching.tasks[i].lambda) ==
          c.switching.lambdas.end()) {
        r.warnings.push_back("switching.tasks[" + std::to_string(i) + "]: lambda outside the pretraining set");
      }
    }
  }

  const std::vector<Cell> cells = expand_cells(c);
  if (cells.empty()) r.notes.push_back("empty sweep: the run writes a manifest only");
  const std::uint64_t max_candidates = search_options(c, 1).max_candidates;
  for (const auto& cell : cells) {
    const std::string where = coords_text(cell.coords);
    const bool searches = c.kind == ExperimentKind::kSearch || c.kind == ExperimentKind::kLandscape ||
                          c.kind == ExperimentKind::kProportion || c.kind == ExperimentKind::kSwitching;
    if (searches && cell.item >= 0) {
      const GeneratorSpec task =
          c.kind == ExperimentKind::kSwitching && cell.item >= 0 ? GeneratorSpec{c.switching.tasks[cell.item]} : c.task;
      const bool by_counts = c.kind != ExperimentKind::kSwitching && reducible(c, cell.predictor, task);
      const PromptConstraint k = constraint_for(c, cell.max_length);
      if (k.max_length < k.min_length) r.errors.push_back(where + ": Lmax below the shortest allowed prompt");
      if (by_counts) {
        r.notes.push_back(where + ": count-class reduction applies");
      } else {
        const double n = prompt_candidates(c, cell.max_length, false);
        if (cell.max_length > kMaxEnumerationLength || n > static_cast<double>(max_candidates)) {
          r.budget.push_back(where + ": exhaustive enumeration of " + num(n) + " prompts exceeds the limit of " +
                             std::to_string(max_candidates));
        } else if (cell.predictor.neural && cell.max_length > 15) {
          r.warnings.push_back(where + ": exhaustive search over " + num(n) + " prompts on a neural predictor");
        }
      }
    }
    if (c.kind == ExperimentKind::kBandit) {
      const auto& b = c.bandit.search;
      const double pulls = pow2(2 * b.prompt_len) * static_cast<double>(b.episodes) * b.steps;
      if (pulls > b.max_pull_budget && !c.long_run) {
        r.budget.push_back(where + ": stage 1 needs " + num(pulls) + " pulls (limit " + num(b.max_pull_budget) +
                           "); long-run flag required");
      }
      continue;
    }
    if (cell.cost > c.max_cell_cost && !c.long_run) {
      r.budget.push_back(where + ": estimated cost " + num(cell.cost) + " exceeds max_cell_cost " +
                         num(c.max_cell_cost) + "; long-run flag required");
    }
  }
  return r;
}

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace

void write_rows_csv(std::ostream& os, const std::vector<std::string>& coord_names, const std::vector<ResultRow>& rows) {
  for (const auto& n : coord_names) os << csv_field(n) << ',';
  os << "metric,value,stderr,seed\n";
  for (const auto& r : rows) {
    for (const auto& [k, v] : r.coords) os << csv_field(v) << ',';
    os << csv_field(r.metric) << ',' << format_number(r.value) << ',' << format_number(r.std_error) << ',' << r.seed
       << '\n';
  }
}

RunSummary run_experiment(const ExperimentConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  const ValidationReport report = validate(config);
  if (!report.errors.empty()) {
    const std::string& first = report.errors.front();
    const auto colon = first.find(':');
    throw ConfigError(first.substr(0, colon), colon == std::string::npos ? "invalid" : first.substr(colon + 2));
  }
  if (!report.budget.empty()) {
    std::string msg = "budget exceeded:";
    for (const auto& b : report.budget) msg += "\n  " + b;
    throw BudgetError(msg);
  }

  const std::vector<Cell> cells = expand_cells(config);
  std::vector<std::vector<ResultRow>> results(cells.size());
  std::vector<double> seconds(cells.size(), 0.0);
  const int workers = std::max(config.workers, 1);
  const bool across_cells = workers > 1 && cells.size() > 1;
  auto run_range = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      results[i] = run_cell(config, cells[i], across_cells ? 1 : workers);
      seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
  };
  if (across_cells) {
    parallel_chunks(cells.size(), workers, run_range);
  } else {
    run_range(0, cells.size());
  }

  const std::filesystem::path dir(config.output_dir);
  std::filesystem::create_directories(dir);
  RunSummary summary;
  summary.cells = cells.size();
  const std::string hash = config_hash(config);
  json files = json::array();
  for (const auto& r : results) summary.rows += r.size();
  if (!cells.empty()) {
    const std::filesystem::path csv = dir / (config.name + ".csv");
    std::vector<ResultRow> all;
    all.reserve(summary.rows);
    for (const auto& r : results) all.insert(all.end(), r.begin(), r.end());
    std::ofstream out(csv, std::ios::binary);
    write_rows_csv(out, coord_columns(config.kind), all);
    if (!out) throw std::runtime_error("cannot write " + csv.string());
    summary.files.push_back(csv);
    files.push_back({{"path", csv.filename().string()}, {"rows", summary.rows}, {"config_hash", hash}});
  }

  json cell_list = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    json coords = json::object();
    for (const auto& [k, v] : cells[i].coords) coords[k] = v;
    cell_list.push_back(
        {{"coords", coords}, {"seed", cells[i].seed}, {"rows", results[i].size()}, {"wall_seconds", seconds[i]}});
  }
  const json manifest = {
      {"name", config.name},
      {"kind", to_string(config.kind)},
      {"config_hash", hash},
      {"config", config.source},
      {"root_seed", config.seed.value_or(0)},
      {"versions",
       {{"binprompt", BINPROMPT_VERSION},
        {"compiler", __VERSION__},
        {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                      std::to_string(EIGEN_MINOR_VERSION)},
        {"boost", BOOST_LIB_VERSION},
        {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                              std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}},
      {"workers", workers},
      {"long_run", config.long_run},
      {"cells", cell_list},
      {"files", files},
      {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()}};
  summary.manifest = dir / (config.name + ".manifest.json");
  std::ofstream mout(summary.manifest);
  mout << manifest.dump(2) << '\n';
  if (!mout) throw std::runtime_error("cannot write " + summary.manifest.string());
  return summary;
}

}  // namespace binprompt
