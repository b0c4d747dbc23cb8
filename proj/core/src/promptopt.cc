#include "binprompt/promptopt.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <ostream>

#include <boost/math/distributions/binomial.hpp>

#include "binprompt/parallel.h"

namespace binprompt {

namespace {

// Continuations weighted by probability mass: the task's own law, or the
// empirical law of a dataset. Node 0 is the empty prefix.
struct PrefixTree {
  struct Node {
    double mass = 0.0;
    int child[2] = {-1, -1};
  };
  std::vector<Node> nodes;
  int depth = 0;
};

void grow_task_tree(PrefixTree& tree, Predictor& q, int node, int depth, std::uint64_t max_nodes) {
  if (depth == tree.depth) return;
  const double p1 = q.next_prob_one();
  const double probs[2] = {1.0 - p1, p1};
  const double parent_mass = tree.nodes[node].mass;
  std::vector<double> saved;
  bool first = true;
  for (Token t : {Token{0}, Token{1}}) {
    if (probs[t] <= 0.0) continue;
    if (tree.nodes.size() >= max_nodes) {
      throw BudgetError("task prefix tree exceeds " + std::to_string(max_nodes) +
                        " nodes; sequence length is too large for exact evaluation");
    }
    const int child = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({parent_mass * probs[t], {-1, -1}});
    tree.nodes[node].child[t] = child;
    if (depth + 1 == tree.depth) continue;
    if (first) {
      saved = q.snapshot();
      first = false;
    } else {
      q.restore(saved);
    }
    q.observe(t);
    grow_task_tree(tree, q, child, depth + 1, max_nodes);
  }
}

PrefixTree task_tree(const GeneratorSpec& task, int seq_len, std::uint64_t max_nodes) {
  PrefixTree tree;
  tree.depth = seq_len;
  tree.nodes.push_back({1.0, {-1, -1}});
  auto q = make_bayes_predictor(task);
  q->reset();
  grow_task_tree(tree, *q, 0, 0, max_nodes);
  return tree;
}

PrefixTree data_tree(const TaskDataset& data) {
  data.check();
  PrefixTree tree;
  tree.depth = data.seq_len;
  tree.nodes.push_back({1.0, {-1, -1}});
  const double w = 1.0 / static_cast<double>(data.size());
  for (const auto& s : data.sequences) {
    int node = 0;
    for (Token t : s) {
      int child = tree.nodes[node].child[t];
      if (child < 0) {
        child = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back({0.0, {-1, -1}});
        tree.nodes[node].child[t] = child;
      }
      tree.nodes[child].mass += w;
      node = child;
    }
  }
  return tree;
}

// sum over tree nodes of mass(prefix + t) * -log pred(t | prefix).
double walk(Predictor& pred, const PrefixTree& tree, int node, int depth) {
  if (depth == tree.depth) return 0.0;
  const auto& n = tree.nodes[node];
  const double p1 = pred.next_prob_one();
  double total = 0.0;
  for (Token t : {Token{0}, Token{1}}) {
    if (n.child[t] >= 0) total -= tree.nodes[n.child[t]].mass * log_bernoulli(t, p1);
  }
  if (depth + 1 == tree.depth) return total;
  const bool both = n.child[0] >= 0 && n.child[1] >= 0;
  std::vector<double> saved;
  if (both) saved = pred.snapshot();
  for (Token t : {Token{0}, Token{1}}) {
    if (n.child[t] < 0) continue;
    if (t == 1 && both) pred.restore(saved);
    pred.observe(t);
    total += walk(pred, tree, n.child[t], depth + 1);
  }
  return total;
}

double prompted_tree_loss(Predictor& pred, const PrefixTree& tree, const BitSeq& prompt) {
  pred.reset();
  for (Token t : prompt) pred.observe(t);
  pred.end_prompt();
  return walk(pred, tree, 0, 0);
}

double tree_entropy(const PrefixTree& tree) {
  double h = 0.0;
  for (const auto& n : tree.nodes) {
    for (int c : n.child) {
      if (c >= 0 && tree.nodes[c].mass > 0) h -= tree.nodes[c].mass * std::log(tree.nodes[c].mass / n.mass);
    }
  }
  return h;
}

// Probability mass per count class of the continuation.
using ClassWeights = std::vector<std::pair<Counts, double>>;

ClassWeights task_classes(const GeneratorSpec& task, int seq_len) {
  ClassWeights out;
  for (int k = 0; k <= seq_len; ++k) {
    const Counts c{seq_len - k, k};
    const double lw = log_binom(seq_len, k) + marginal_log_prob_counts(task, c);
    out.push_back({c, std::exp(lw)});
  }
  return out;
}

ClassWeights histogram_classes(const CountHistogram& hist) {
  double n = 0;
  for (const auto& [c, k] : hist) n += k;
  ClassWeights out;
  for (const auto& [c, k] : hist) out.push_back({c, k / n});
  return out;
}

double class_loss(const CountModel& model, Counts prompt, const ClassWeights& classes) {
  double total = 0.0;
  for (const auto& [c, w] : classes) {
    if (w > 0.0) total -= w * model.log_prob_counts(prompt, c);
  }
  return total;
}

bool count_reducible(const Predictor& pred, const SearchOptions& opts) {
  return opts.use_count_reduction && pred.count_model() != nullptr;
}

BitSeq nth_prompt(PromptConstraint c, std::uint64_t index) {
  for (int len = c.min_length; len <= c.max_length; ++len) {
    const std::uint64_t size = std::uint64_t{1} << len;
    if (index < size) return BitSeq::from_bits(index, len);
    index -= size;
  }
  throw std::out_of_range("prompt index out of range");
}

void check_constraint(PromptConstraint c) {
  if (c.min_length < 0 || c.max_length < c.min_length) throw std::invalid_argument("invalid prompt length range");
}

SearchResult collect(bool by_counts, std::vector<PromptLoss> table, bool keep_table) {
  SearchResult r;
  r.by_counts = by_counts;
  if (table.empty()) throw std::invalid_argument("search over an empty candidate set");
  double best = std::numeric_limits<double>::infinity();
  for (const auto& row : table) {
    if (row.loss < best) best = row.loss;
  }
  r.best_loss = best;
  const double tol = kTieTolerance * std::abs(best);
  for (const auto& row : table) {
    if (row.loss <= best + tol || (std::isinf(best) && row.loss == best)) {
      r.best_prompts.push_back(row.prompt);
      r.best_counts.push_back(row.counts);
    }
  }
  if (keep_table) r.table = std::move(table);
  return r;
}

// Losses inside the tie tolerance can still differ in truth: when the task
// matches a mixture component the gap is second order in the leftover
// posterior weight and drowns in the rounding of the cross-entropy. Models
// with a stable log-ratio re-rank such ties by their exact loss differences.
void refine_ties(const CountModel& model, const ClassWeights& classes, SearchResult& r) {
  if (r.best_counts.size() < 2 || !std::isfinite(r.best_loss)) return;
  const std::size_t n = r.best_counts.size();
  std::vector<double> gap(n), scale(n);
  // Gaps are measured from an anchor; the tolerance scales with how far the
  // anchor sits from each candidate, so re-anchor on the winner until stable.
  std::size_t anchor = 0;
  for (std::size_t pass = 0; pass < n; ++pass) {
    std::fill(gap.begin(), gap.end(), 0.0);
    std::fill(scale.begin(), scale.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (const auto& [c, w] : classes) {
        if (w <= 0.0) continue;
        const auto term = model.log_prob_ratio_counts(r.best_counts[anchor], r.best_counts[i], c);
        if (!term) return;
        gap[i] += w * *term;
        scale[i] += std::abs(w * *term);
      }
    }
    const auto best = static_cast<std::size_t>(std::min_element(gap.begin(), gap.end()) - gap.begin());
    if (gap[best] >= 0.0) break;
    anchor = best;
  }
  std::vector<BitSeq> prompts;
  std::vector<Counts> kept;
  for (std::size_t i = 0; i < n; ++i) {
    if (gap[i] <= kTieTolerance * scale[i]) {
      prompts.push_back(r.best_prompts[i]);
      kept.push_back(r.best_counts[i]);
    }
  }
  r.best_prompts = std::move(prompts);
  r.best_counts = std::move(kept);
}

SearchResult search_classes(const CountModel& model, const ClassWeights& classes, PromptConstraint constraint,
                            const SearchOptions& opts) {
  const auto pairs = enumerate_count_pairs(constraint.min_length, constraint.max_length);
  if (pairs.size() > opts.max_candidates) throw BudgetError("too many count classes to search");
  std::vector<PromptLoss> table;
  table.reserve(pairs.size());
  for (const Counts c : pairs) table.push_back({class_representative(c), c, class_loss(model, c, classes)});
  SearchResult r = collect(true, std::move(table), opts.keep_table);
  refine_ties(model, classes, r);
  return r;
}

SearchResult search_prompts(const Predictor& pred, const PrefixTree& tree, PromptConstraint constraint,
                            const SearchOptions& opts) {
  if (constraint.max_length > kMaxEnumerationLength) {
    throw BudgetError("refusing to enumerate prompts longer than " + std::to_string(kMaxEnumerationLength));
  }
  const std::uint64_t n = PromptRange(constraint.min_length, constraint.max_length).size();
  if (n > opts.max_candidates) {
    throw BudgetError("prompt search needs " + std::to_string(n) + " candidates; limit is " +
                      std::to_string(opts.max_candidates));
  }
  std::vector<PromptLoss> table(n);
  parallel_chunks(n, opts.workers, [&](std::size_t begin, std::size_t end) {
    auto local = pred.clone();
    for (std::size_t i = begin; i < end; ++i) {
      BitSeq s = nth_prompt(constraint, i);
      const double loss = prompted_tree_loss(*local, tree, s);
      table[i] = {s, counts(s), loss};
    }
  });
  return collect(false, std::move(table), opts.keep_table);
}

}  // namespace

BitSeq class_representative(Counts c) {
  BitSeq s = BitSeq::repeat(0, c.zeros);
  return s.concat(BitSeq::repeat(1, c.ones));
}

double expected_log_loss(Predictor& pred, const GeneratorSpec& task, const BitSeq& prompt, int seq_len,
                         const SearchOptions& opts) {
  if (seq_len < 1) throw std::invalid_argument("sequence length must be positive");
  validate(task);
  if (count_reducible(pred, opts) && is_cib(task)) {
    return class_loss(*pred.count_model(), counts(prompt), task_classes(task, seq_len));
  }
  return prompted_tree_loss(pred, task_tree(task, seq_len, opts.max_tree_nodes), prompt);
}

double task_entropy(const GeneratorSpec& task, int seq_len, const SearchOptions& opts) {
  validate(task);
  if (is_cib(task) && opts.use_count_reduction) {
    double h = 0.0;
    for (const auto& [c, w] : task_classes(task, seq_len)) {
      if (w > 0.0) h -= w * marginal_log_prob_counts(task, c);
    }
    return h;
  }
  return tree_entropy(task_tree(task, seq_len, opts.max_tree_nodes));
}

SearchResult theoretical_optimal(const Predictor& pred, const GeneratorSpec& task, int seq_len,
                                 PromptConstraint constraint, const SearchOptions& opts) {
  check_constraint(constraint);
  validate(task);
  if (count_reducible(pred, opts) && is_cib(task)) {
    return search_classes(*pred.count_model(), task_classes(task, seq_len), constraint, opts);
  }
  return search_prompts(pred, task_tree(task, seq_len, opts.max_tree_nodes), constraint, opts);
}

double empirical_log_loss(Predictor& pred, const TaskDataset& data, const BitSeq& prompt) {
  data.check();
  double total = 0.0;
  for (const auto& x : data.sequences) total += seq_log_prob(pred, prompt, x);
  return -total / static_cast<double>(data.size());
}

SearchResult empirical_optimal(const Predictor& pred, const TaskDataset& data, PromptConstraint constraint,
                               const SearchOptions& opts) {
  check_constraint(constraint);
  if (count_reducible(pred, opts)) return empirical_optimal_counts(pred, count_histogram(data), constraint, opts);
  return search_prompts(pred, data_tree(data), constraint, opts);
}

CountHistogram count_histogram(const TaskDataset& data) {
  data.check();
  std::map<Counts, int> hist;
  for (const auto& s : data.sequences) ++hist[counts(s)];
  return {hist.begin(), hist.end()};
}

CountHistogram sample_count_histogram(const GeneratorSpec& task, int n, int seq_len, Rng& rng) {
  if (!is_cib(task)) throw std::invalid_argument("count histograms need a CIB task");
  std::vector<int> by_ones(seq_len + 1, 0);
  for (int i = 0; i < n; ++i) {
    const double tau = std::get<CoinLatent>(sample_latent(task, rng)).tau;
    int ones = 0;
    for (int t = 0; t < seq_len; ++t) ones += rng.bernoulli(tau);
    ++by_ones[ones];
  }
  CountHistogram out;
  // Same order as count_histogram: ascending zeros.
  for (int k = seq_len; k >= 0; --k) {
    if (by_ones[k] > 0) out.push_back({{seq_len - k, k}, by_ones[k]});
  }
  return out;
}

SearchResult empirical_optimal_counts(const Predictor& pred, const CountHistogram& data, PromptConstraint constraint,
                                      const SearchOptions& opts) {
  check_constraint(constraint);
  if (!pred.count_model()) throw std::invalid_argument("predictor has no count model");
  return search_classes(*pred.count_model(), histogram_classes(data), constraint, opts);
}

bool CorrectnessCriterion::is_correct(const BitSeq& candidate) const {
  if (mode == MatchMode::kCountMatch) return is_correct(counts(candidate));
  return std::find(reference.best_prompts.begin(), reference.best_prompts.end(), candidate) !=
         reference.best_prompts.end();
}

bool CorrectnessCriterion::is_correct(Counts candidate) const {
  if (mode != MatchMode::kCountMatch) throw std::logic_error("exact matching needs the full prompt");
  return std::find(reference.best_counts.begin(), reference.best_counts.end(), candidate) !=
         reference.best_counts.end();
}

CorrectnessCriterion make_criterion(const GeneratorSpec& pretrain, SearchResult reference) {
  return {is_cib(pretrain) ? MatchMode::kCountMatch : MatchMode::kExactMatchAny, std::move(reference)};
}

PredictorKind PredictorKind::parse(const std::string& text) {
  if (text == "bayes") return {};
  const std::string prefix = "neural:";
  if (text.rfind(prefix, 0) == 0) return {true, parse_torso(text.substr(prefix.size()))};
  throw std::invalid_argument("unknown predictor kind '" + text + "' (expected bayes or neural:<torso>)");
}

std::string PredictorKind::str() const { return neural ? "neural:" + to_string(torso) : "bayes"; }

Proportion proportion_correct(const PromptSetup& setup, int repetitions, const SearchOptions& opts) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be positive");
  SearchOptions inner = opts;
  inner.workers = 1;
  inner.keep_table = false;
  const auto bayes = make_bayes_predictor(setup.pretrain);
  const CorrectnessCriterion criterion =
      make_criterion(setup.pretrain, theoretical_optimal(*bayes, setup.task, setup.seq_len, setup.constraint, inner));
  const SeedSpec root{setup.seed, {}};

  std::vector<char> hits(repetitions, 0);
  parallel_chunks(repetitions, opts.workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      const SeedSpec data_seed = root.child({1, r});
      if (!setup.predictor.neural) {
        auto pred = make_bayes_predictor(setup.pretrain);
        if (pred->count_model() && is_cib(setup.task) && inner.use_count_reduction) {
          Rng rng(data_seed);
          const auto hist = sample_count_histogram(setup.task, setup.dataset_size, setup.seq_len, rng);
          hits[r] = criterion.is_correct(empirical_optimal_counts(*pred, hist, setup.constraint, inner).best_prompts[0]);
        } else {
          const auto data = sample_dataset(setup.task, setup.dataset_size, setup.seq_len, data_seed);
          hits[r] = criterion.is_correct(empirical_optimal(*pred, data, setup.constraint, inner).best_prompts[0]);
        }
      } else {
        TrainConfig tcfg = setup.training;
        tcfg.seed = root.child({2, r}).key();
        ModelConfig mcfg = setup.model;
        mcfg.torso = setup.predictor.torso;
        auto trained = train(setup.pretrain, mcfg, tcfg);
        NeuralPredictor pred(trained.model);
        const auto data = sample_dataset(setup.task, setup.dataset_size, setup.seq_len, data_seed);
        hits[r] = criterion.is_correct(empirical_optimal(pred, data, setup.constraint, inner).best_prompts[0]);
      }
    }
  });

  Proportion p;
  p.trials = repetitions;
  p.successes = static_cast<int>(std::count(hits.begin(), hits.end(), 1));
  p.value = static_cast<double>(p.successes) / repetitions;
  p.std_error = std::sqrt(p.value * (1.0 - p.value) / repetitions);
  return p;
}

double correct_threshold_t1(const BernMix& pretrain, int max_length, int dataset_size) {
  if (max_length < 1) throw std::invalid_argument("Lmax must be at least 1");
  BernMixPredictor pred(pretrain);
  auto predictive = [&](int ones) {
    const double w = pred.w_post(Counts{0, ones});
    return (1.0 - w) * pretrain.tau1 + w * pretrain.tau2;
  };
  const double best = predictive(max_length);
  const double runner_up = predictive(max_length - 1);
  return dataset_size * std::log((1.0 - runner_up) / (1.0 - best)) /
         std::log(best * (1.0 - runner_up) / (runner_up * (1.0 - best)));
}

double correct_prob_t1(const BernMix& pretrain, int max_length, int dataset_size, double tau_q) {
  const double kappa = correct_threshold_t1(pretrain, max_length, dataset_size);
  if (kappa < 0) return 1.0;
  if (kappa >= dataset_size) return 0.0;
  boost::math::binomial_distribution<double> dist(dataset_size, tau_q);
  return boost::math::cdf(boost::math::complement(dist, std::floor(kappa)));
}

LandscapeTable kl_landscape(const Predictor& pred, const GeneratorSpec& task, int seq_len,
                            PromptConstraint constraint, const SearchOptions& opts) {
  SearchOptions all = opts;
  all.keep_table = true;
  const SearchResult r = theoretical_optimal(pred, task, seq_len, constraint, all);
  const double h = task_entropy(task, seq_len, opts);
  LandscapeTable out;
  out.by_counts = r.by_counts;
  out.rows.reserve(r.table.size());
  for (const auto& row : r.table) out.rows.push_back({row.prompt, row.counts, row.loss - h, 0});
  std::stable_sort(out.rows.begin(), out.rows.end(),
                   [](const LandscapeRow& a, const LandscapeRow& b) { return a.kl < b.kl; });
  for (std::size_t i = 0; i < out.rows.size(); ++i) out.rows[i].rank = static_cast<int>(i);
  return out;
}

TypicalLoss typical_prompt_loss(const Predictor& pred, const GeneratorSpec& task, int prompt_len, int seq_len,
                                int num_samples, Rng& rng, const SearchOptions& opts) {
  if (num_samples < 1) throw std::invalid_argument("num_samples must be positive");
  auto local = pred.clone();
  const bool by_counts = count_reducible(*local, opts) && is_cib(task);
  const PrefixTree tree = by_counts ? PrefixTree{} : task_tree(task, seq_len, opts.max_tree_nodes);
  const ClassWeights classes = by_counts ? task_classes(task, seq_len) : ClassWeights{};
  std::map<BitSeq, double> memo;
  RunningStats stats;
  for (int i = 0; i < num_samples; ++i) {
    const BitSeq s = sample_sequence(task, prompt_len, rng);
    auto it = memo.find(s);
    if (it == memo.end()) {
      const double loss = by_counts ? class_loss(*local->count_model(), counts(s), classes)
                                    : prompted_tree_loss(*local, tree, s);
      it = memo.emplace(s, loss).first;
    }
    stats.add(it->second);
  }
  return {stats.mean(), stats.std_error(), stats.stddev(), static_cast<int>(memo.size())};
}

void write_search_csv(std::ostream& os, const SearchResult& result) {
  const auto& rows = result.table;
  std::vector<PromptLoss> best;
  if (rows.empty()) {
    for (std::size_t i = 0; i < result.best_prompts.size(); ++i) {
      best.push_back({result.best_prompts[i], result.best_counts[i], result.best_loss});
    }
  }
  const auto& src = rows.empty() ? best : rows;
  std::vector<std::size_t> order(src.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return src[a].loss < src[b].loss; });
  os.precision(17);
  os << (result.by_counts ? "S0,S1,loss,rank\n" : "prompt,loss,rank\n");
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    const auto& row = src[order[rank]];
    if (result.by_counts) {
      os << row.counts.zeros << ',' << row.counts.ones;
    } else {
      os << row.prompt.str();
    }
    os << ',' << row.loss << ',' << rank << '\n';
  }
}

void write_landscape_csv(std::ostream& os, const LandscapeTable& table) {
  os.precision(17);
  os << (table.by_counts ? "S0,S1,kl,rank\n" : "prompt,kl,rank\n");
  for (const auto& row : table.rows) {
    if (table.by_counts) {
      os << row.counts.zeros << ',' << row.counts.ones;
    } else {
      os << row.prompt.str();
    }
    os << ',' << row.kl << ',' << row.rank << '\n';
  }
}

}  // namespace binprompt
