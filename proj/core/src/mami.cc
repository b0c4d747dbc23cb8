#include "binprompt/mami.h"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "binprompt/numerics.h"
#include "binprompt/parallel.h"
#include "binprompt/seq.h"

namespace binprompt {

namespace {

constexpr double kRowTolerance = 1e-12;
constexpr double kMaxEntries = 1e6;

void check_stochastic(const Eigen::MatrixXd& m, const char* what) {
  if ((m.array() < 0.0).any() || !m.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": entries must be finite and non-negative");
  }
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (std::abs(m.row(r).sum() - 1.0) > kRowTolerance) {
      throw std::invalid_argument(std::string(what) + ": row " + std::to_string(r) + " does not sum to 1");
    }
  }
}

double entropy_of(const Eigen::VectorXd& p) {
  double h = 0.0;
  for (double v : p) h -= xlogy(v, v);
  return h;
}

}  // namespace

void FiniteJoint::validate() const {
  if (prior.size() == 0 || strategy.cols() == 0 || likelihood.cols() == 0) {
    throw std::invalid_argument("finite joint: empty space");
  }
  if (strategy.rows() != prior.size() || likelihood.rows() != prior.size() || reference.rows() != strategy.cols() ||
      reference.cols() != likelihood.cols()) {
    throw std::invalid_argument("finite joint: table shapes do not match");
  }
  const double entries = static_cast<double>(prior.size()) * static_cast<double>(strategy.cols()) *
                         static_cast<double>(likelihood.cols());
  if (entries > kMaxEntries) throw std::invalid_argument("finite joint: more than 1e6 table entries");
  if ((prior.array() < 0.0).any() || std::abs(prior.sum() - 1.0) > kRowTolerance) {
    throw std::invalid_argument("finite joint: prior must be a probability vector");
  }
  check_stochastic(strategy, "strategy");
  check_stochastic(likelihood, "likelihood");
  check_stochastic(reference, "reference");
}

Eigen::MatrixXd FiniteJoint::joint() const {
  return strategy.transpose() * prior.asDiagonal() * likelihood;
}

double mutual_information(const FiniteJoint& j) {
  j.validate();
  const Eigen::MatrixXd pj = j.joint();
  const Eigen::VectorXd ps = pj.rowwise().sum();
  const Eigen::VectorXd px = pj.colwise().sum().transpose();
  double mi = 0.0;
  for (Eigen::Index s = 0; s < pj.rows(); ++s) {
    for (Eigen::Index x = 0; x < pj.cols(); ++x) {
      if (pj(s, x) > 0.0) mi += pj(s, x) * std::log(pj(s, x) / (ps[s] * px[x]));
    }
  }
  return mi;
}

double mami(const FiniteJoint& j) {
  j.validate();
  const Eigen::MatrixXd pj = j.joint();
  const Eigen::VectorXd ps = pj.rowwise().sum();
  double expected_kl = 0.0;
  for (Eigen::Index s = 0; s < pj.rows(); ++s) {
    if (ps[s] <= 0.0) continue;
    for (Eigen::Index x = 0; x < pj.cols(); ++x) {
      const double cond = pj(s, x) / ps[s];
      if (cond <= 0.0) continue;
      if (j.reference(s, x) <= 0.0) return -std::numeric_limits<double>::infinity();
      expected_kl += ps[s] * cond * std::log(cond / j.reference(s, x));
    }
  }
  return mutual_information(j) - expected_kl;
}

double mami_cross_entropy_form(const FiniteJoint& j) {
  j.validate();
  const Eigen::MatrixXd pj = j.joint();
  double cross = 0.0;
  for (Eigen::Index s = 0; s < pj.rows(); ++s) {
    for (Eigen::Index x = 0; x < pj.cols(); ++x) {
      if (pj(s, x) <= 0.0) continue;
      if (j.reference(s, x) <= 0.0) return -std::numeric_limits<double>::infinity();
      cross += pj(s, x) * std::log(j.reference(s, x));
    }
  }
  return entropy_of(pj.colwise().sum().transpose()) + cross;
}

std::vector<int> best_prompt_per_latent(const FiniteJoint& j) {
  j.validate();
  const Eigen::MatrixXd log_ref = j.reference.array().log().matrix();
  std::vector<int> best(j.latents(), 0);
  for (int t = 0; t < j.latents(); ++t) {
    double top = -std::numeric_limits<double>::infinity();
    for (int s = 0; s < j.prompts(); ++s) {
      double score = 0.0;
      for (int x = 0; x < j.sequences(); ++x) {
        if (j.likelihood(t, x) > 0.0) score += j.likelihood(t, x) * log_ref(s, x);
      }
      if (score > top) {
        top = score;
        best[t] = s;
      }
    }
  }
  return best;
}

Eigen::MatrixXd deterministic_strategy(const std::vector<int>& choice, int prompts) {
  Eigen::MatrixXd nu = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(choice.size()), prompts);
  for (std::size_t t = 0; t < choice.size(); ++t) {
    if (choice[t] < 0 || choice[t] >= prompts) throw std::invalid_argument("deterministic_strategy: bad prompt index");
    nu(static_cast<Eigen::Index>(t), choice[t]) = 1.0;
  }
  return nu;
}

Eigen::MatrixXd random_strategy(int latents, int prompts, Rng& rng) {
  Eigen::MatrixXd nu(latents, prompts);
  for (int t = 0; t < latents; ++t) {
    for (int s = 0; s < prompts; ++s) nu(t, s) = rng.gamma(1.0);
    nu.row(t) /= nu.row(t).sum();
  }
  return nu;
}

FiniteJoint random_finite_joint(int latents, int prompts, int sequences, Rng& rng) {
  FiniteJoint j;
  j.prior = random_strategy(1, latents, rng).row(0).transpose();
  j.strategy = random_strategy(latents, prompts, rng);
  j.likelihood = random_strategy(latents, sequences, rng);
  j.reference = random_strategy(prompts, sequences, rng);
  return j;
}

PropositionCheck verify_proposition(const FiniteJoint& j, Rng& rng, int random_strategies, double tolerance,
                                    int workers) {
  j.validate();
  const int latents = j.latents();
  const int prompts = j.prompts();
  const double total = std::pow(static_cast<double>(prompts), latents);
  if (total > kMaxEntries) throw BudgetError("verify_proposition: more than 1e6 deterministic strategies");
  const auto count = static_cast<std::size_t>(std::llround(total));

  PropositionCheck out;
  out.witness = best_prompt_per_latent(j);
  FiniteJoint probe = j;
  probe.strategy = deterministic_strategy(out.witness, prompts);
  out.witness_value = mami(probe);

  std::vector<double> values(count);
  parallel_chunks(count, workers, [&](std::size_t begin, std::size_t end) {
    FiniteJoint local = j;
    std::vector<int> choice(latents);
    for (std::size_t code = begin; code < end; ++code) {
      std::size_t rest = code;
      for (int t = 0; t < latents; ++t) {
        choice[t] = static_cast<int>(rest % prompts);
        rest /= prompts;
      }
      local.strategy = deterministic_strategy(choice, prompts);
      values[code] = mami(local);
    }
  });
  out.deterministic_checked = static_cast<long long>(count);
  out.best_deterministic = -std::numeric_limits<double>::infinity();
  for (double v : values) out.best_deterministic = std::max(out.best_deterministic, v);

  out.best_random = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < random_strategies; ++i) {
    probe.strategy = random_strategy(latents, prompts, rng);
    out.best_random = std::max(out.best_random, mami(probe));
  }
  out.holds = out.witness_value + tolerance >= out.best_deterministic &&
              out.witness_value + tolerance >= out.best_random;
  return out;
}

}  // namespace binprompt
