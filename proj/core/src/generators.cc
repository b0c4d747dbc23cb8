#include "binprompt/generators.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "binprompt/numerics.h"

namespace binprompt {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument(what);
}

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

double coin_log_prob(double tau, Counts c) { return xlogy(c.ones, tau) + xlogy(c.zeros, 1.0 - tau); }

// Tokens flipped inside (1 - eps) runs so that they become i.i.d. Bernoulli(eps).
Counts flipped_counts(std::span<const Token> seq, int lambda) {
  Counts c;
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const int z = seq[t] ^ static_cast<int>(in_flipped_run(static_cast<int>(t), lambda));
    if (z) {
      ++c.ones;
    } else {
      ++c.zeros;
    }
  }
  return c;
}

double number_field(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw std::invalid_argument(std::string("generator: missing key '") + key + "'");
  const auto& v = j.at(key);
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    // Accept exact fractions such as "1/3".
    const auto text = v.get<std::string>();
    const auto slash = text.find('/');
    try {
      if (slash == std::string::npos) return std::stod(text);
      return std::stod(text.substr(0, slash)) / std::stod(text.substr(slash + 1));
    } catch (const std::exception&) {
    }
  }
  throw std::invalid_argument(std::string("generator: key '") + key + "' must be a number");
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed) {
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") continue;
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      throw std::invalid_argument("generator: unknown key '" + key + "'");
    }
  }
}

}  // namespace

void validate(const GeneratorSpec& spec) {
  std::visit(Overloaded{
                 [](const Bern& g) { require(is_probability(g.tau), "Bern: tau must lie in [0, 1]"); },
                 [](const BernMix& g) {
                   require(g.w > 0.0 && g.w < 1.0, "BernMix: w must lie in (0, 1)");
                   require(is_probability(g.tau1) && is_probability(g.tau2),
                           "BernMix: tau1 and tau2 must lie in [0, 1]");
                 },
                 [](const BetaBern& g) {
                   require(g.alpha > 0.0 && g.beta > 0.0, "BetaBern: alpha and beta must be positive");
                 },
                 [](const SwitchProc& g) {
                   require(is_probability(g.eps), "SwitchProc: eps must lie in [0, 1]");
                   require(g.lambda >= 1, "SwitchProc: lambda must be positive");
                 },
                 [](const RandomSwitch& g) {
                   require(!g.lambdas.empty(), "RandomSwitch: lambda set is empty");
                   for (int l : g.lambdas) require(l >= 1, "RandomSwitch: lambda must be positive");
                 },
             },
             spec);
}

bool is_cib(const GeneratorSpec& spec) {
  return std::holds_alternative<Bern>(spec) || std::holds_alternative<BernMix>(spec) ||
         std::holds_alternative<BetaBern>(spec);
}

std::string describe(const GeneratorSpec& spec) {
  std::ostringstream os;
  os.precision(6);
  std::visit(Overloaded{
                 [&](const Bern& g) { os << "Bern(" << g.tau << ')'; },
                 [&](const BernMix& g) { os << "BernMix(" << g.w << ',' << g.tau1 << ',' << g.tau2 << ')'; },
                 [&](const BetaBern& g) { os << "BetaBern(" << g.alpha << ',' << g.beta << ')'; },
                 [&](const SwitchProc& g) { os << "SwitchProc(" << g.eps << ',' << g.lambda << ')'; },
                 [&](const RandomSwitch& g) {
                   os << "RandomSwitch({";
                   for (std::size_t i = 0; i < g.lambdas.size(); ++i) os << (i ? "," : "") << g.lambdas[i];
                   os << "})";
                 },
             },
             spec);
  return os.str();
}

LatentValue sample_latent(const GeneratorSpec& spec, Rng& rng) {
  return std::visit(
      Overloaded{
          [](const Bern& g) -> LatentValue { return CoinLatent{g.tau}; },
          [&](const BernMix& g) -> LatentValue { return CoinLatent{rng.bernoulli(g.w) ? g.tau2 : g.tau1}; },
          [&](const BetaBern& g) -> LatentValue { return CoinLatent{rng.beta(g.alpha, g.beta)}; },
          [](const SwitchProc& g) -> LatentValue { return SwitchLatent{g.eps, g.lambda}; },
          [&](const RandomSwitch& g) -> LatentValue {
            const double eps = rng.uniform();
            const auto idx = rng.uniform_int(0, static_cast<std::int64_t>(g.lambdas.size()) - 1);
            return SwitchLatent{eps, g.lambdas[idx]};
          },
      },
      spec);
}

std::vector<double> bias_track(double eps, int lambda, int length, int phase) {
  std::vector<double> y(length);
  for (int t = 0; t < length; ++t) y[t] = in_flipped_run(t + phase, lambda) ? 1.0 - eps : eps;
  return y;
}

BitSeq sample_sequence(const LatentValue& latent, int length, Rng& rng) {
  if (length < 0) throw std::invalid_argument("sample_sequence: negative length");
  std::vector<Token> tokens(length);
  if (const auto* coin = std::get_if<CoinLatent>(&latent)) {
    for (auto& t : tokens) t = rng.bernoulli(coin->tau);
  } else {
    const auto& sw = std::get<SwitchLatent>(latent);
    for (int t = 0; t < length; ++t) {
      tokens[t] = rng.bernoulli(in_flipped_run(t, sw.lambda) ? 1.0 - sw.eps : sw.eps);
    }
  }
  return BitSeq(std::move(tokens));
}

BitSeq sample_sequence(const GeneratorSpec& spec, int length, Rng& rng) {
  return sample_sequence(sample_latent(spec, rng), length, rng);
}

double cond_log_prob(const LatentValue& latent, std::span<const Token> seq) {
  if (const auto* coin = std::get_if<CoinLatent>(&latent)) return coin_log_prob(coin->tau, counts(seq));
  const auto& sw = std::get<SwitchLatent>(latent);
  return coin_log_prob(sw.eps, flipped_counts(seq, sw.lambda));
}

double marginal_log_prob_counts(const GeneratorSpec& spec, Counts c) {
  return std::visit(
      Overloaded{
          [&](const Bern& g) { return coin_log_prob(g.tau, c); },
          [&](const BernMix& g) {
            return log_add_exp(std::log1p(-g.w) + coin_log_prob(g.tau1, c), std::log(g.w) + coin_log_prob(g.tau2, c));
          },
          [&](const BetaBern& g) { return log_beta(g.alpha + c.ones, g.beta + c.zeros) - log_beta(g.alpha, g.beta); },
          [](const auto&) -> double {
            throw std::invalid_argument("marginal_log_prob_counts: generator is not CIB");
          },
      },
      spec);
}

double marginal_log_prob(const GeneratorSpec& spec, std::span<const Token> seq) {
  if (is_cib(spec)) return marginal_log_prob_counts(spec, counts(seq));
  if (const auto* g = std::get_if<SwitchProc>(&spec)) return cond_log_prob(SwitchLatent{g->eps, g->lambda}, seq);
  const auto& g = std::get<RandomSwitch>(spec);
  std::vector<double> terms;
  for (int lambda : g.lambdas) {
    const Counts z = flipped_counts(seq, lambda);
    terms.push_back(log_beta(1.0 + z.ones, 1.0 + z.zeros));
  }
  return log_sum_exp(terms) - std::log(static_cast<double>(terms.size()));
}

std::vector<std::pair<double, double>> coin_atoms(const GeneratorSpec& spec) {
  if (const auto* g = std::get_if<Bern>(&spec)) return {{g->tau, 1.0}};
  if (const auto* g = std::get_if<BernMix>(&spec)) return {{g->tau1, 1.0 - g->w}, {g->tau2, g->w}};
  return {};
}

TaskDataset sample_dataset(const GeneratorSpec& spec, int n, int length, const SeedSpec& seed) {
  if (n < 1 || length < 1) throw std::invalid_argument("sample_dataset: N and T must be positive");
  TaskDataset data;
  data.seq_len = length;
  data.source_seed = seed.key();
  data.sequences.reserve(n);
  Rng rng(seed);
  for (int i = 0; i < n; ++i) data.sequences.push_back(sample_sequence(spec, length, rng));
  return data;
}

void to_json(nlohmann::json& j, const GeneratorSpec& spec) {
  std::visit(Overloaded{
                 [&](const Bern& g) { j = {{"kind", "bern"}, {"tau", g.tau}}; },
                 [&](const BernMix& g) {
                   j = {{"kind", "bern_mix"}, {"w", g.w}, {"tau1", g.tau1}, {"tau2", g.tau2}};
                 },
                 [&](const BetaBern& g) { j = {{"kind", "beta_bern"}, {"alpha", g.alpha}, {"beta", g.beta}}; },
                 [&](const SwitchProc& g) { j = {{"kind", "switch"}, {"eps", g.eps}, {"lambda", g.lambda}}; },
                 [&](const RandomSwitch& g) { j = {{"kind", "random_switch"}, {"lambdas", g.lambdas}}; },
             },
             spec);
}

void from_json(const nlohmann::json& j, GeneratorSpec& spec) {
  if (!j.is_object() || !j.contains("kind") || !j.at("kind").is_string()) {
    throw std::invalid_argument("generator: expected an object with a string 'kind'");
  }
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "bern") {
    check_keys(j, {"tau"});
    spec = Bern{number_field(j, "tau")};
  } else if (kind == "bern_mix") {
    check_keys(j, {"w", "tau1", "tau2"});
    BernMix g;
    if (j.contains("w")) g.w = number_field(j, "w");
    g.tau1 = number_field(j, "tau1");
    g.tau2 = number_field(j, "tau2");
    spec = g;
  } else if (kind == "beta_bern") {
    check_keys(j, {"alpha", "beta"});
    spec = BetaBern{number_field(j, "alpha"), number_field(j, "beta")};
  } else if (kind == "switch") {
    check_keys(j, {"eps", "lambda"});
    const double lambda = number_field(j, "lambda");
    if (lambda != std::floor(lambda)) throw std::invalid_argument("generator: 'lambda' must be an integer");
    spec = SwitchProc{number_field(j, "eps"), static_cast<int>(lambda)};
  } else if (kind == "random_switch") {
    check_keys(j, {"lambdas"});
    RandomSwitch g;
    if (j.contains("lambdas")) {
      if (!j.at("lambdas").is_array()) throw std::invalid_argument("generator: 'lambdas' must be a list");
      g.lambdas.clear();
      for (const auto& v : j.at("lambdas")) {
        if (!v.is_number_integer()) throw std::invalid_argument("generator: 'lambdas' must hold integers");
        g.lambdas.push_back(v.get<int>());
      }
    }
    spec = g;
  } else {
    throw std::invalid_argument("generator: unknown kind '" + kind + "'");
  }
  validate(spec);
}

GeneratorSpec parse_generator(const nlohmann::json& j) {
  GeneratorSpec spec;
  from_json(j, spec);
  return spec;
}

}  // namespace binprompt
