#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>

#include "binprompt/neural.h"

namespace binprompt {

using Eigen::VectorXd;

namespace {

constexpr const char* kCheckpointFormat = "binprompt-checkpoint";
constexpr int kCheckpointVersion = 1;

}  // namespace

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"final_lr_fraction", c.final_lr_fraction},
       {"grad_clip", c.grad_clip},
       {"seq_len", c.seq_len},
       {"seed", c.seed},
       {"log_every", c.log_every}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "steps") {
      c.steps = value.get<int>();
    } else if (key == "batch_size") {
      c.batch_size = value.get<int>();
    } else if (key == "learning_rate") {
      c.learning_rate = value.get<double>();
    } else if (key == "final_lr_fraction") {
      c.final_lr_fraction = value.get<double>();
    } else if (key == "grad_clip") {
      c.grad_clip = value.get<double>();
    } else if (key == "seq_len") {
      c.seq_len = value.get<int>();
    } else if (key == "seed") {
      c.seed = value.get<std::uint64_t>();
    } else if (key == "log_every") {
      c.log_every = value.get<int>();
    } else {
      throw std::invalid_argument("training: unknown key '" + key + "'");
    }
  }
  if (c.steps < 0 || c.batch_size < 1 || !(c.learning_rate > 0) || c.seq_len < 1 || c.log_every < 1) {
    throw std::invalid_argument("training: steps, batch_size, learning_rate, seq_len and log_every must be positive");
  }
}

TrainingDiverged::TrainingDiverged(int step, double loss)
    : std::runtime_error("training diverged at step " + std::to_string(step) + " (loss " + std::to_string(loss) + ")"),
      step_(step) {}

TrainResult train_model(const ModelConfig& mcfg, const TrainConfig& tcfg, const BatchSampler& sampler,
                        const std::function<void(const NeuralModel&, const LossPoint&)>& on_log) {
  const SeedSpec root{tcfg.seed, {}};
  TrainResult result;
  result.model = std::make_shared<NeuralModel>(mcfg, root.child(0).key());
  NeuralModel& model = *result.model;
  Rng data_rng(root.child(1));

  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  VectorXd m = VectorXd::Zero(model.num_params());
  VectorXd v = VectorXd::Zero(model.num_params());
  VectorXd grad;
  double window = 0.0;
  int window_n = 0;
  for (int step = 1; step <= tcfg.steps; ++step) {
    const Batch batch = sampler(tcfg.batch_size, data_rng);
    const double loss = model.loss_and_grad(batch, grad);
    if (!std::isfinite(loss) || !grad.allFinite()) throw TrainingDiverged(step, loss);
    const double norm = grad.norm();
    if (tcfg.grad_clip > 0 && norm > tcfg.grad_clip) grad *= tcfg.grad_clip / norm;

    const double progress = static_cast<double>(step - 1) / std::max(1, tcfg.steps - 1);
    const double lr = tcfg.learning_rate * (tcfg.final_lr_fraction + (1.0 - tcfg.final_lr_fraction) * 0.5 *
                                                                          (1.0 + std::cos(std::numbers::pi * progress)));
    m = kBeta1 * m + (1.0 - kBeta1) * grad;
    v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseAbs2();
    const double c1 = 1.0 - std::pow(kBeta1, step);
    const double c2 = 1.0 - std::pow(kBeta2, step);
    model.params().array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);

    window += loss;
    ++window_n;
    if (step % tcfg.log_every == 0 || step == tcfg.steps) {
      result.trace.push_back({step, window / window_n});
      if (on_log) on_log(model, result.trace.back());
      window = 0.0;
      window_n = 0;
    }
  }
  return result;
}

Batch sample_batch(const GeneratorSpec& spec, int batch_size, int seq_len, Rng& rng) {
  Batch batch(batch_size);
  for (auto& ex : batch) {
    const BitSeq s = sample_sequence(spec, seq_len, rng);
    ex.tokens.assign(s.begin(), s.end());
  }
  return batch;
}

TrainResult train(const GeneratorSpec& spec, const ModelConfig& mcfg, const TrainConfig& tcfg) {
  validate(spec);
  const int len = tcfg.seq_len;
  return train_model(mcfg, tcfg, [&](int b, Rng& rng) { return sample_batch(spec, b, len, rng); });
}

VectorXd numerical_gradient(const NeuralModel& model, const Batch& batch, double epsilon) {
  NeuralModel probe = model;
  VectorXd out(model.num_params());
  for (Eigen::Index i = 0; i < model.num_params(); ++i) {
    const double saved = probe.params()[i];
    probe.params()[i] = saved + epsilon;
    const double up = probe.loss(batch);
    probe.params()[i] = saved - epsilon;
    const double down = probe.loss(batch);
    probe.params()[i] = saved;
    out[i] = (up - down) / (2.0 * epsilon);
  }
  return out;
}

double max_relative_error(const VectorXd& analytic, const VectorXd& numeric, double floor) {
  if (analytic.size() != numeric.size()) throw std::invalid_argument("gradient size mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double denom = std::max(std::abs(analytic[i]) + std::abs(numeric[i]), floor);
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

double grad_check(const NeuralModel& model, const Batch& batch, double epsilon) {
  if (batch.empty()) return 0.0;
  VectorXd analytic;
  model.loss_and_grad(batch, analytic);
  return max_relative_error(analytic, numerical_gradient(model, batch, epsilon));
}

MeanStderr eval_kl_vs_bayes(Predictor& model, Predictor& bayes, const GeneratorSpec& spec, int n, int seq_len,
                            Rng& rng) {
  RunningStats stats;
  for (int i = 0; i < n; ++i) {
    const BitSeq x = sample_sequence(spec, seq_len, rng);
    model.reset();
    bayes.reset();
    double total = 0.0;
    for (Token t : x) {
      total += next_log_prob(bayes, t) - next_log_prob(model, t);
      model.observe(t);
      bayes.observe(t);
    }
    stats.add(total);
  }
  return stats.summary();
}

void save_checkpoint(std::ostream& os, const NeuralModel& model, std::uint64_t train_seed) {
  const auto& p = model.params();
  nlohmann::json j = {{"format", kCheckpointFormat},
                      {"version", kCheckpointVersion},
                      {"model", model.config()},
                      {"train_seed", train_seed},
                      {"params", std::vector<double>(p.data(), p.data() + p.size())}};
  os << j.dump() << '\n';
}

std::shared_ptr<NeuralModel> load_checkpoint(std::istream& is, std::uint64_t* train_seed) {
  const auto j = nlohmann::json::parse(is);
  if (j.value("format", "") != kCheckpointFormat) throw std::invalid_argument("checkpoint: unrecognised format");
  if (j.value("version", 0) != kCheckpointVersion) throw std::invalid_argument("checkpoint: unsupported version");
  auto model = std::make_shared<NeuralModel>(j.at("model").get<ModelConfig>(), 0);
  const auto values = j.at("params").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(values.size()) != model->num_params()) {
    throw std::invalid_argument("checkpoint: parameter count does not match the model");
  }
  model->params() = Eigen::Map<const VectorXd>(values.data(), model->num_params());
  if (train_seed) *train_seed = j.at("train_seed").get<std::uint64_t>();
  return model;
}

void write_loss_trace(std::ostream& os, const std::vector<LossPoint>& trace) {
  os << "step,loss\n";
  os.precision(17);
  for (const auto& p : trace) os << p.step << ',' << p.loss << '\n';
}

}  // namespace binprompt
