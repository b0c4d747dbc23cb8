#include "binprompt/bandit.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/legendre.hpp>

namespace binprompt {

namespace {

struct Rule {
  std::vector<double> x;  // on [0, 1], ascending
  std::vector<double> w;
};

Rule gauss_legendre(int n) {
  std::vector<std::pair<double, double>> nodes;
  for (double r : boost::math::legendre_p_zeros<double>(n)) {
    const double d = boost::math::legendre_p_prime(n, r);
    const double w = 1.0 / ((1.0 - r * r) * d * d);  // halved for [0, 1]
    nodes.emplace_back(0.5 * (1.0 + r), w);
    if (r != 0.0) nodes.emplace_back(0.5 * (1.0 - r), w);
  }
  std::sort(nodes.begin(), nodes.end());
  Rule rule;
  for (const auto& [x, w] : nodes) {
    rule.x.push_back(x);
    rule.w.push_back(w);
  }
  return rule;
}

const Rule& rule_512() {
  static const Rule r = gauss_legendre(256);
  return r;
}
const Rule& rule_256() {
  static const Rule r = gauss_legendre(128);
  return r;
}

void check_positive(double a, double b, double c, double d) {
  if (!(a > 0) || !(b > 0) || !(c > 0) || !(d > 0)) {
    throw std::invalid_argument("beta_gt_prob: parameters must be positive");
  }
}

double beta_variance(double a, double b) { return a * b / ((a + b) * (a + b) * (a + b + 1.0)); }

// Integral of f_X * F_Y over the bulk of X, which must be the narrower
// variable. Each half of the window uses `half` (one rule) with a power map
// towards an end that touches 0 or 1. Near 1 the points are carried as their
// distance to 1 so that they do not round onto the end point.
double narrow_integral(double a, double b, double c, double d, const Rule& half) {
  const double mean = a / (a + b);
  const double sd = std::sqrt(beta_variance(a, b));
  const double lo = std::max(0.0, mean - 20.0 * sd);
  const double hi = std::min(1.0, mean + 20.0 * sd);
  const double mid = 0.5 * (lo + hi);
  const double log_norm = log_beta(a, b);
  // Steeper maps for densities that are singular at the end.
  const double left_power = lo == 0.0 ? std::clamp(std::ceil(4.0 / a), 4.0, 64.0) : 1.0;
  const double right_power = hi == 1.0 ? std::clamp(std::ceil(4.0 / b), 4.0, 64.0) : 1.0;

  // x and u = 1 - x, with u exact when x is close to 1.
  auto term = [&](double x, double u) {
    if (!(x > 0.0) || !(u > 0.0)) return 0.0;
    const double f = std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log(u) - log_norm);
    const double cdf = x <= 0.5 ? boost::math::ibeta(c, d, x) : boost::math::ibetac(d, c, u);
    return f * cdf;
  };

  double total = 0.0;
  for (std::size_t i = 0; i < half.x.size(); ++i) {
    const double t = half.x[i];
    {
      const double tp = std::pow(t, left_power);
      const double x = lo + (mid - lo) * tp;
      const double jac = (mid - lo) * left_power * tp / t;
      total += half.w[i] * jac * term(x, 1.0 - x);
    }
    {
      const double tp = std::pow(t, right_power);
      const double gap = (hi - mid) * tp;
      const double jac = (hi - mid) * right_power * tp / t;
      const double u = hi == 1.0 ? gap : 1.0 - (hi - gap);
      total += half.w[i] * jac * term(hi - gap, u);
    }
  }
  return total;
}

double beta_gt_with(double a, double b, double c, double d, const Rule& half) {
  // X > Y iff 1 - Y > 1 - X, which puts the narrower variable first without
  // a subtraction that would cancel when the answer is tiny.
  if (beta_variance(a, b) <= beta_variance(c, d)) return narrow_integral(a, b, c, d, half);
  return narrow_integral(d, c, b, a, half);
}

// 8-point panels with the matrix that integrates the panel interpolant from
// the panel start to each node.
constexpr int kPanelNodes = 8;

struct PanelRule {
  std::array<double, kPanelNodes> x{};
  std::array<double, kPanelNodes> w{};
  std::array<std::array<double, kPanelNodes>, kPanelNodes> partial{};
};

PanelRule make_panel_rule() {
  const Rule r = gauss_legendre(kPanelNodes);
  PanelRule p;
  for (int i = 0; i < kPanelNodes; ++i) {
    p.x[i] = r.x[i];
    p.w[i] = r.w[i];
  }
  for (int i = 0; i < kPanelNodes; ++i) {
    for (int j = 0; j < kPanelNodes; ++j) {
      double s = 0.0;
      for (int k = 0; k < kPanelNodes; ++k) {
        const double t = p.x[k] * p.x[i];
        double basis = 1.0;
        for (int m = 0; m < kPanelNodes; ++m) {
          if (m != j) basis *= (t - p.x[m]) / (p.x[j] - p.x[m]);
        }
        s += p.w[k] * p.x[i] * basis;
      }
      p.partial[i][j] = s;
    }
  }
  return p;
}

const PanelRule& panel_rule() {
  static const PanelRule p = make_panel_rule();
  return p;
}

double panel_narrow_integral(double a, double b, double c, double d) {
  constexpr double kWindowSds = 14.0;
  constexpr int kGradingLevels = 8;
  constexpr double kGradingRatio = 0.1;
  const PanelRule& pr = panel_rule();

  const double mean = a / (a + b);
  const double sd = std::sqrt(beta_variance(a, b));
  const double lo = std::max(0.0, mean - kWindowSds * sd);
  const double hi = std::min(1.0, mean + kWindowSds * sd);
  const int panels = std::max(1, static_cast<int>(std::ceil((hi - lo) / sd)));
  const double width = (hi - lo) / panels;

  std::vector<double> edges;
  edges.reserve(panels + 2 * kGradingLevels + 1);
  edges.push_back(lo);
  if (lo == 0.0) {
    double r = width;
    std::vector<double> graded;
    for (int k = 0; k < kGradingLevels; ++k) graded.push_back(r *= kGradingRatio);
    edges.insert(edges.end(), graded.rbegin(), graded.rend());
  }
  for (int p = 1; p < panels; ++p) edges.push_back(lo + p * width);
  if (hi == 1.0) {
    double r = width;
    for (int k = 0; k < kGradingLevels; ++k) edges.push_back(1.0 - (r *= kGradingRatio));
    std::sort(edges.end() - kGradingLevels, edges.end());
  }
  edges.push_back(hi);

  const double norm_x = log_beta(a, b);
  const double norm_y = log_beta(c, d);
  double cdf = lo > 0.0 ? boost::math::ibeta(c, d, lo) : 0.0;
  double total = 0.0;
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const double x0 = edges[p];
    const double h = edges[p + 1] - x0;
    std::array<double, kPanelNodes> fx{};
    std::array<double, kPanelNodes> fy{};
    for (int i = 0; i < kPanelNodes; ++i) {
      const double x = x0 + h * pr.x[i];
      const double lx = std::log(x);
      const double l1 = std::log1p(-x);
      fx[i] = std::exp((a - 1.0) * lx + (b - 1.0) * l1 - norm_x);
      fy[i] = std::exp((c - 1.0) * lx + (d - 1.0) * l1 - norm_y);
    }
    double panel_mass = 0.0;
    for (int i = 0; i < kPanelNodes; ++i) {
      double partial = 0.0;
      for (int j = 0; j < kPanelNodes; ++j) partial += pr.partial[i][j] * fy[j];
      total += h * pr.w[i] * fx[i] * (cdf + h * partial);
      panel_mass += pr.w[i] * fy[i];
    }
    cdf += h * panel_mass;
  }
  return total;
}

// P(the agent pulls `arm`). Counts are put in a canonical orientation first,
// so mirrored counts give bitwise mirrored probabilities.
double skill_arm_prob(double tau, const ArmCounts& c, Arm arm) {
  const std::pair left{c.wins[0], c.losses[0]};
  const std::pair right{c.wins[1], c.losses[1]};
  if (tau == 0.0 || left == right) return 0.5;
  const Arm first = left > right ? Arm::kLeft : Arm::kRight;
  const int f = index(first);
  const int s = 1 - f;
  const double g = beta_gt_prob_fast(1.0 + tau * c.wins[f], 1.0 + tau * c.losses[f], 1.0 + tau * c.wins[s],
                                     1.0 + tau * c.losses[s]);
  return arm == first ? g : 1.0 - g;
}

char arm_char(Arm a) { return a == Arm::kLeft ? 'L' : 'R'; }

}  // namespace

BanditEnv BanditEnv::sample(Rng& rng) {
  const double left = rng.uniform();
  const double right = rng.uniform();
  return {left, right};
}

Arm SkillAgent::act(Rng& rng) const {
  const double left = rng.beta(1.0 + tau * counts.wins[0], 1.0 + tau * counts.losses[0]);
  const double right = rng.beta(1.0 + tau * counts.wins[1], 1.0 + tau * counts.losses[1]);
  if (left > right) return Arm::kLeft;
  if (right > left) return Arm::kRight;
  return rng.bernoulli(0.5) ? Arm::kLeft : Arm::kRight;
}

double SkillAgent::prob_left() const { return skill_arm_prob(tau, counts, Arm::kLeft); }

double sample_skill(Rng& rng, double k) {
  if (!(k > 0)) throw std::invalid_argument("sample_skill: k must be positive");
  return std::pow(rng.uniform(), k);
}

std::string BanditPrompt::str() const {
  std::string out;
  for (const Pull& p : pulls) {
    if (!out.empty()) out += ' ';
    out += arm_char(p.arm);
    out += p.reward ? '1' : '0';
  }
  return out;
}

BanditPrompt BanditPrompt::parse(const std::string& text) {
  BanditPrompt prompt;
  std::istringstream in(text);
  std::string item;
  while (in >> item) {
    if (item.size() != 2 || (item[0] != 'L' && item[0] != 'R') || (item[1] != '0' && item[1] != '1')) {
      throw std::invalid_argument("bandit prompt: expected pulls like 'L1 R0', got '" + item + "'");
    }
    prompt.pulls.push_back({item[0] == 'L' ? Arm::kLeft : Arm::kRight, item[1] == '1'});
  }
  return prompt;
}

BanditPrompt BanditPrompt::mirrored() const {
  BanditPrompt m = *this;
  for (Pull& p : m.pulls) p.arm = other(p.arm);
  return m;
}

std::uint64_t BanditPrompt::code() const {
  if (pulls.size() > 32) throw std::invalid_argument("bandit prompt: too long for an integer code");
  std::uint64_t c = 0;
  for (const Pull& p : pulls) c = (c << 2) | (static_cast<std::uint64_t>(index(p.arm)) << 1) | (p.reward ? 1u : 0u);
  return c;
}

BanditPrompt BanditPrompt::from_code(std::uint64_t code, int length) {
  if (length < 0 || length > 32) throw std::invalid_argument("bandit prompt: length out of range");
  BanditPrompt p;
  p.pulls.resize(length);
  for (int i = length - 1; i >= 0; --i) {
    p.pulls[i] = {(code & 2u) ? Arm::kRight : Arm::kLeft, (code & 1u) != 0};
    code >>= 2;
  }
  return p;
}

BanditTrajectory gen_trajectory(Rng& rng, int prompt_len, int rollout_len, const TrajectoryOverrides& overrides) {
  if (prompt_len < 0 || rollout_len < 0) throw std::invalid_argument("gen_trajectory: negative length");
  BanditTrajectory traj;
  traj.skill = overrides.skill ? *overrides.skill : sample_skill(rng);
  if (traj.skill < 0.0 || traj.skill > 1.0) throw std::invalid_argument("gen_trajectory: skill outside [0, 1]");

  auto run = [&](const BanditEnv& env, int len, std::vector<Pull>& out) {
    SkillAgent agent{traj.skill, {}};
    for (int i = 0; i < len; ++i) {
      const Arm a = agent.act(rng);
      const Pull p{a, rng.bernoulli(env.value(a))};
      agent.record(p);
      out.push_back(p);
    }
  };
  traj.prompt_env = overrides.prompt_env ? *overrides.prompt_env : BanditEnv::sample(rng);
  run(traj.prompt_env, prompt_len, traj.prompt.pulls);
  traj.rollout_env = overrides.rollout_env ? *overrides.rollout_env : BanditEnv::sample(rng);
  run(traj.rollout_env, rollout_len, traj.rollout);
  return traj;
}

std::vector<Token> encode(const BanditTrajectory& traj) {
  std::vector<Token> out;
  out.reserve(2 * (traj.prompt.pulls.size() + traj.rollout.size()) + 1);
  auto put = [&](const Pull& p) {
    out.push_back(static_cast<Token>(index(p.arm)));
    out.push_back(p.reward ? 1 : 0);
  };
  for (const Pull& p : traj.prompt.pulls) put(p);
  out.push_back(kSeparator);
  for (const Pull& p : traj.rollout) put(p);
  return out;
}

BanditTrajectory decode(std::span<const Token> tokens) {
  const auto sep = std::find(tokens.begin(), tokens.end(), kSeparator);
  if (sep == tokens.end()) throw std::invalid_argument("bandit tokens: missing separator");
  auto pairs = [](std::span<const Token> seg, std::vector<Pull>& out) {
    if (seg.size() % 2 != 0) throw std::invalid_argument("bandit tokens: odd segment length");
    for (std::size_t i = 0; i < seg.size(); i += 2) {
      if (seg[i] > 1 || seg[i + 1] > 1) throw std::invalid_argument("bandit tokens: symbol out of range");
      out.push_back({seg[i] ? Arm::kRight : Arm::kLeft, seg[i + 1] == 1});
    }
  };
  BanditTrajectory traj;
  const auto split = static_cast<std::size_t>(sep - tokens.begin());
  pairs(tokens.subspan(0, split), traj.prompt.pulls);
  pairs(tokens.subspan(split + 1), traj.rollout);
  return traj;
}

TrainExample to_train_example(const BanditTrajectory& traj) {
  TrainExample ex;
  ex.tokens = encode(traj);
  ex.scored.assign(ex.tokens.size(), 0);
  const std::size_t prompt_tokens = 2 * traj.prompt.pulls.size();
  for (std::size_t i = 0; i < prompt_tokens; i += 2) ex.scored[i] = 1;
  for (std::size_t i = prompt_tokens + 1; i < ex.tokens.size(); i += 2) ex.scored[i] = 1;
  return ex;
}

Batch sample_bandit_batch(int batch_size, int prompt_len, int rollout_len, Rng& rng) {
  Batch batch;
  batch.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) batch.push_back(to_train_example(gen_trajectory(rng, prompt_len, rollout_len)));
  return batch;
}

void write_trajectory(std::ostream& os, const BanditTrajectory& traj) {
  const auto old = os.precision(17);
  os << "skill=" << traj.skill << " prompt_env=" << traj.prompt_env.v_left << ',' << traj.prompt_env.v_right
     << " rollout_env=" << traj.rollout_env.v_left << ',' << traj.rollout_env.v_right << " seed=" << traj.seed << '\n';
  os.precision(old);
  for (Token t : encode(traj)) os << static_cast<char>('0' + t);
  os << '\n';
}

BanditTrajectory read_trajectory(std::istream& is) {
  std::string header;
  std::string body;
  if (!std::getline(is, header) || !std::getline(is, body)) {
    throw std::invalid_argument("trajectory file: expected a header line and a token line");
  }
  std::vector<Token> tokens;
  for (char ch : body) {
    if (ch < '0' || ch > '2') throw std::invalid_argument("trajectory file: bad token character");
    tokens.push_back(static_cast<Token>(ch - '0'));
  }
  BanditTrajectory traj = decode(tokens);

  auto env = [](const std::string& v) {
    const auto comma = v.find(',');
    if (comma == std::string::npos) throw std::invalid_argument("trajectory file: env needs 'vL,vR'");
    return BanditEnv{std::stod(v.substr(0, comma)), std::stod(v.substr(comma + 1))};
  };
  std::istringstream in(header);
  std::string field;
  while (in >> field) {
    const auto eq = field.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("trajectory file: bad header field '" + field + "'");
    const std::string key = field.substr(0, eq);
    const std::string value = field.substr(eq + 1);
    if (key == "skill") {
      traj.skill = std::stod(value);
    } else if (key == "prompt_env") {
      traj.prompt_env = env(value);
    } else if (key == "rollout_env") {
      traj.rollout_env = env(value);
    } else if (key == "seed") {
      traj.seed = std::stoull(value);
    } else {
      throw std::invalid_argument("trajectory file: unknown header field '" + key + "'");
    }
  }
  return traj;
}

double beta_gt_prob(double a, double b, double c, double d) { return beta_gt_prob_checked(a, b, c, d).value; }

QuadratureEstimate beta_gt_prob_checked(double a, double b, double c, double d) {
  check_positive(a, b, c, d);
  const double fine = beta_gt_with(a, b, c, d, rule_512());
  const double coarse = beta_gt_with(a, b, c, d, rule_256());
  return {std::clamp(fine, 0.0, 1.0), std::abs(fine - coarse)};
}

double beta_gt_prob_fast(double a, double b, double c, double d) {
  check_positive(a, b, c, d);
  const double p = beta_variance(a, b) <= beta_variance(c, d) ? panel_narrow_integral(a, b, c, d)
                                                              : panel_narrow_integral(d, c, b, a);
  return std::clamp(p, 0.0, 1.0);
}

double skill_prob_left(double tau, const ArmCounts& counts) { return skill_arm_prob(tau, counts, Arm::kLeft); }

TauGrid::TauGrid(int points, double k) {
  if (points < 2) throw std::invalid_argument("TauGrid: need at least two points");
  if (!(k > 0)) throw std::invalid_argument("TauGrid: k must be positive");
  tau.resize(points);
  log_weights.resize(points);
  for (int i = 0; i < points; ++i) tau[i] = static_cast<double>(i) / (points - 1);
  // P(tau <= x) = x^(1/k); each point owns the cell between the midpoints
  // to its neighbours.
  auto cdf = [k](double x) { return std::pow(x, 1.0 / k); };
  for (int i = 0; i < points; ++i) {
    const double lo = i == 0 ? 0.0 : 0.5 * (tau[i - 1] + tau[i]);
    const double hi = i == points - 1 ? 1.0 : 0.5 * (tau[i] + tau[i + 1]);
    log_weights[i] = std::log(cdf(hi) - cdf(lo));
  }
}

std::vector<double> TauGrid::weights() const {
  const double norm = log_sum_exp(log_weights);
  std::vector<double> w(log_weights.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::exp(log_weights[i] - norm);
  return w;
}

BanditBayes::BanditBayes(TauGrid prior) : prior_(std::move(prior)), grid_(prior_) {}

void BanditBayes::reset() {
  grid_ = prior_;
  counts_ = {};
}

void BanditBayes::observe(Pull p) {
  for (int i = 0; i < grid_.size(); ++i) {
    grid_.log_weights[i] += std::log(skill_arm_prob(grid_.tau[i], counts_, p.arm));
  }
  const double norm = log_sum_exp(grid_.log_weights);
  for (double& lw : grid_.log_weights) lw -= norm;
  counts_.record(p);
}

double BanditBayes::prob_left() const {
  const std::vector<double> w = grid_.weights();
  double left = 0.0;
  double right = 0.0;
  for (int i = 0; i < grid_.size(); ++i) {
    left += w[i] * skill_arm_prob(grid_.tau[i], counts_, Arm::kLeft);
    right += w[i] * skill_arm_prob(grid_.tau[i], counts_, Arm::kRight);
  }
  return left / (left + right);
}

double bayes_action_prob(std::span<const Pull> history, const TauGrid& grid) {
  BanditBayes bayes(grid);
  for (const Pull& p : history) bayes.observe(p);
  return bayes.prob_left();
}

Wsls wsls(std::span<const Pull> pulls) {
  int wins = 0;
  int stays = 0;
  int losses = 0;
  int shifts = 0;
  for (std::size_t i = 0; i + 1 < pulls.size(); ++i) {
    const bool same = pulls[i + 1].arm == pulls[i].arm;
    if (pulls[i].reward) {
      ++wins;
      stays += same;
    } else {
      ++losses;
      shifts += !same;
    }
  }
  Wsls out;
  if (wins > 0) out.win_stay = static_cast<double>(stays) / wins;
  if (losses > 0) out.lose_shift = static_cast<double>(shifts) / losses;
  return out;
}

bool is_fail_then_streak(const BanditPrompt& p) {
  if (p.size() < 2 || p.pulls[0].reward) return false;
  const Arm stay = other(p.pulls[0].arm);
  for (int i = 1; i < p.size(); ++i) {
    if (p.pulls[i].arm != stay) return false;
    if (i + 1 < p.size() && !p.pulls[i].reward) return false;
  }
  return true;
}

ScriptedPrompts scripted_prompts(int length) {
  if (length < 1) throw std::invalid_argument("scripted_prompts: length must be positive");
  ScriptedPrompts s;
  const BanditPrompt mixed = BanditPrompt::parse("L1 R0 L1 L0 L1 L1 L1 L1");
  for (int i = 0; i < length; ++i) {
    const Arm a = i % 2 == 0 ? Arm::kLeft : Arm::kRight;
    s.max_explore.pulls.push_back({a, a == Arm::kLeft});
    s.max_exploit.pulls.push_back({Arm::kLeft, true});
    s.heuristic.pulls.push_back(i < mixed.size() ? mixed.pulls[i] : Pull{Arm::kLeft, true});
  }
  return s;
}

BanditPrompt ts_demonstration(int length, Rng& rng) {
  TrajectoryOverrides full_skill;
  full_skill.skill = 1.0;
  return gen_trajectory(rng, length, 0, full_skill).prompt;
}

}  // namespace binprompt
