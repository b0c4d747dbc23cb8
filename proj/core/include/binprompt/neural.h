#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "binprompt/bayes.h"
#include "binprompt/generators.h"
#include "binprompt/numerics.h"
#include "binprompt/rng.h"

namespace binprompt {

enum class TorsoKind { kRecurrent, kLstm, kAttention };

std::string to_string(TorsoKind kind);
TorsoKind parse_torso(const std::string& name);

struct ModelConfig {
  TorsoKind torso = TorsoKind::kLstm;
  int hidden = 32;
  int heads = 2;
  int layers = 1;
  int max_seq_len = 256;
  // Input symbols excluding the begin-of-sequence marker. Targets are always
  // binary; a third symbol serves as a separator for bandit trajectories.
  int vocab = 2;

  void validate() const;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// One training sequence. The model reads a begin marker followed by
// tokens[0..n-2] and is scored on predicting tokens[t] wherever scored[t] is
// set (every position when `scored` is empty). Scored targets must be 0 or 1.
struct TrainExample {
  std::vector<Token> tokens;
  std::vector<std::uint8_t> scored;
};

// Every example in a batch has the same length.
using Batch = std::vector<TrainExample>;

// Embedding, torso, residual MLP and a sigmoid head, with all parameters in
// one flat vector so optimizers and gradient checks see a single buffer.
class NeuralModel {
 public:
  NeuralModel(const ModelConfig& config, std::uint64_t init_seed);

  const ModelConfig& config() const { return config_; }
  Eigen::VectorXd& params() { return params_; }
  const Eigen::VectorXd& params() const { return params_; }
  Eigen::Index num_params() const { return params_.size(); }

  // P(next symbol = 1) after the begin marker and after each prefix of
  // `inputs`: inputs.size() + 1 values.
  std::vector<double> forward(std::span<const Token> inputs) const;

  // Mean log-loss per scored token.
  double loss(const Batch& batch) const;
  // Same, also writing d loss / d params into `grad` (resized as needed).
  double loss_and_grad(const Batch& batch, Eigen::VectorXd& grad) const;

  // Incremental inference state: recurrent state or attention key/value cache.
  struct Stream {
    int position = 0;
    double prob_one = 0.5;
    Eigen::VectorXd hidden;
    Eigen::VectorXd cell;
    std::vector<Eigen::MatrixXd> keys;    // per layer, hidden x position
    std::vector<Eigen::MatrixXd> values;  // per layer, hidden x position
  };
  // Stream positioned after the begin marker.
  Stream start() const;
  void step(Stream& s, Token symbol) const;

 private:
  struct Block {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
  };
  struct Layout;
  struct Cache;

  Eigen::Map<const Eigen::MatrixXd> view(const Block& b) const;
  Eigen::Map<Eigen::MatrixXd> view(Eigen::VectorXd& buf, const Block& b) const;
  double run(const Batch& batch, Eigen::VectorXd* grad, std::vector<double>* probs) const;
  Eigen::VectorXd head_input(const Eigen::VectorXd& embedded, const Eigen::VectorXd& torso_out) const;

  ModelConfig config_;
  std::shared_ptr<const Layout> layout_;
  Eigen::VectorXd params_;
};

// Predictor backed by a trained network. The prompt simply continues the
// stream, so end_prompt is a no-op.
class NeuralPredictor final : public Predictor {
 public:
  explicit NeuralPredictor(std::shared_ptr<const NeuralModel> model);

  void reset() override;
  void observe(Token t) override;
  double next_prob_one() const override { return stream_.prob_one; }
  std::vector<double> snapshot() const override;
  void restore(std::span<const double> state) override;
  std::unique_ptr<Predictor> clone() const override { return std::make_unique<NeuralPredictor>(*this); }
  std::string name() const override;

  const NeuralModel& model() const { return *model_; }

 private:
  std::shared_ptr<const NeuralModel> model_;
  NeuralModel::Stream stream_;
};

struct TrainConfig {
  int steps = 20000;
  int batch_size = 64;
  double learning_rate = 1e-3;
  // Learning rate decays along a cosine to this fraction of its start.
  double final_lr_fraction = 0.1;
  double grad_clip = 1.0;
  int seq_len = 100;
  std::uint64_t seed = 0;
  int log_every = 100;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// Thrown when the loss turns non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(int step, double loss);
  int step() const { return step_; }

 private:
  int step_;
};

struct LossPoint {
  int step = 0;
  double loss = 0.0;
};

struct TrainResult {
  std::shared_ptr<NeuralModel> model;
  // Mean training loss over each window of `log_every` steps.
  std::vector<LossPoint> trace;
};

// Draws a fresh batch for one optimizer step.
using BatchSampler = std::function<Batch(int batch_size, Rng& rng)>;

// Adam with global-norm clipping. `on_log` runs after every logged window.
TrainResult train_model(const ModelConfig& mcfg, const TrainConfig& tcfg, const BatchSampler& sampler,
                        const std::function<void(const NeuralModel&, const LossPoint&)>& on_log = {});

// Meta-training on sequences from a generator; the latent is redrawn per
// sequence.
TrainResult train(const GeneratorSpec& spec, const ModelConfig& mcfg, const TrainConfig& tcfg);

Batch sample_batch(const GeneratorSpec& spec, int batch_size, int seq_len, Rng& rng);

// Central finite differences over every parameter.
Eigen::VectorXd numerical_gradient(const NeuralModel& model, const Batch& batch, double epsilon);
// max_i |a_i - n_i| / max(|a_i| + |n_i|, floor).
double max_relative_error(const Eigen::VectorXd& analytic, const Eigen::VectorXd& numeric,
                          double floor = 1e-6);
// Zero for an empty batch.
double grad_check(const NeuralModel& model, const Batch& batch, double epsilon = 1e-4);

// (1/N) sum_i sum_t log[p_bayes(x_t | x_<t) / p_model(x_t | x_<t)] over
// sequences drawn from `spec`.
MeanStderr eval_kl_vs_bayes(Predictor& model, Predictor& bayes, const GeneratorSpec& spec, int n, int seq_len,
                            Rng& rng);

void save_checkpoint(std::ostream& os, const NeuralModel& model, std::uint64_t train_seed);
// Returns the model and writes the stored training seed if requested.
std::shared_ptr<NeuralModel> load_checkpoint(std::istream& is, std::uint64_t* train_seed = nullptr);
void write_loss_trace(std::ostream& os, const std::vector<LossPoint>& trace);

}  // namespace binprompt
