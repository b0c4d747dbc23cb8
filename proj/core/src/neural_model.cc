#include <cmath>
#include <stdexcept>

#include "binprompt/neural.h"

namespace binprompt {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

double gelu(double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); }

double gelu_grad(double x) {
  const double t = std::tanh(kGeluC * (x + kGeluA * x * x * x));
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

MatrixXd sigmoid(const MatrixXd& m) { return m.unaryExpr([](double x) { return sigmoid(x); }); }

// Row-wise softmax over keys j <= i.
void causal_softmax(MatrixXd& s) {
  const Index n = s.rows();
  for (Index i = 0; i < n; ++i) {
    const double m = s.row(i).head(i + 1).maxCoeff();
    double z = 0.0;
    for (Index j = 0; j <= i; ++j) {
      s(i, j) = std::exp(s(i, j) - m);
      z += s(i, j);
    }
    for (Index j = 0; j <= i; ++j) s(i, j) /= z;
    for (Index j = i + 1; j < n; ++j) s(i, j) = 0.0;
  }
}

}  // namespace

std::string to_string(TorsoKind kind) {
  switch (kind) {
    case TorsoKind::kRecurrent:
      return "rnn";
    case TorsoKind::kLstm:
      return "lstm";
    case TorsoKind::kAttention:
      return "attention";
  }
  return "unknown";
}

TorsoKind parse_torso(const std::string& name) {
  if (name == "rnn") return TorsoKind::kRecurrent;
  if (name == "lstm") return TorsoKind::kLstm;
  if (name == "attention") return TorsoKind::kAttention;
  throw std::invalid_argument("unknown torso '" + name + "' (expected rnn, lstm or attention)");
}

void ModelConfig::validate() const {
  if (hidden < 1 || heads < 1 || layers < 1 || max_seq_len < 1 || vocab < 2) {
    throw std::invalid_argument("model config: sizes must be positive and vocab at least 2");
  }
  if (torso == TorsoKind::kAttention && hidden % heads != 0) {
    throw std::invalid_argument("model config: hidden size must be divisible by the number of heads");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"torso", to_string(c.torso)}, {"hidden", c.hidden},           {"heads", c.heads},
       {"layers", c.layers},          {"max_seq_len", c.max_seq_len}, {"vocab", c.vocab}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  for (const auto& [key, value] : j.items()) {
    if (key == "torso") {
      c.torso = parse_torso(value.get<std::string>());
    } else if (key == "hidden") {
      c.hidden = value.get<int>();
    } else if (key == "heads") {
      c.heads = value.get<int>();
    } else if (key == "layers") {
      c.layers = value.get<int>();
    } else if (key == "max_seq_len") {
      c.max_seq_len = value.get<int>();
    } else if (key == "vocab") {
      c.vocab = value.get<int>();
    } else {
      throw std::invalid_argument("model: unknown key '" + key + "'");
    }
  }
  c.validate();
}

struct NeuralModel::Layout {
  Block emb, pos;
  Block wx, wh, b;
  std::vector<Block> wq, wk, wv, wo;
  Block w1, b1, w2, b2, head_w, head_b;
  Index size = 0;
};

// Intermediate values of one batched forward pass. Columns are time-major:
// column t * B + b holds position t of example b.
struct NeuralModel::Cache {
  int batch = 0;
  int steps = 0;
  std::vector<int> symbols;
  MatrixXd embedded, torso_out, mlp_pre, mlp_act, head_in;
  // Recurrent torsos.
  MatrixXd gates, cell, cell_tanh;
  // Attention, per example then per layer.
  struct LayerCache {
    MatrixXd in, q, k, v, mixed;
    std::vector<MatrixXd> probs;  // per head
  };
  std::vector<std::vector<LayerCache>> attention;
};

Eigen::Map<const MatrixXd> NeuralModel::view(const Block& b) const {
  return {params_.data() + b.offset, b.rows, b.cols};
}

Eigen::Map<MatrixXd> NeuralModel::view(VectorXd& buf, const Block& b) const {
  return {buf.data() + b.offset, b.rows, b.cols};
}

NeuralModel::NeuralModel(const ModelConfig& config, std::uint64_t init_seed) : config_(config) {
  config_.validate();
  auto layout = std::make_shared<Layout>();
  Layout& ly = *layout;
  const Index h = config_.hidden;
  auto add_block = [&ly](Index rows, Index cols) {
    Block b{ly.size, rows, cols};
    ly.size += rows * cols;
    return b;
  };
  ly.emb = add_block(h, config_.vocab + 1);
  if (config_.torso == TorsoKind::kAttention) {
    ly.pos = add_block(h, config_.max_seq_len);
    for (int l = 0; l < config_.layers; ++l) {
      ly.wq.push_back(add_block(h, h));
      ly.wk.push_back(add_block(h, h));
      ly.wv.push_back(add_block(h, h));
      ly.wo.push_back(add_block(h, h));
    }
  } else {
    const Index g = config_.torso == TorsoKind::kLstm ? 4 * h : h;
    ly.wx = add_block(g, h);
    ly.wh = add_block(g, h);
    ly.b = add_block(g, 1);
  }
  ly.w1 = add_block(h, h);
  ly.b1 = add_block(h, 1);
  ly.w2 = add_block(h, h);
  ly.b2 = add_block(h, 1);
  ly.head_w = add_block(1, h);
  ly.head_b = add_block(1, 1);
  layout_ = std::move(layout);

  params_ = VectorXd::Zero(ly.size);
  Rng rng(SeedSpec{init_seed, {}});
  const double scale = 1.0 / std::sqrt(static_cast<double>(h));
  auto fill = [&](const Block& b, double sd) {
    auto m = view(params_, b);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
  };
  fill(ly.emb, 1.0);
  if (config_.torso == TorsoKind::kAttention) {
    fill(ly.pos, 0.1);
    for (int l = 0; l < config_.layers; ++l) {
      fill(ly.wq[l], scale);
      fill(ly.wk[l], scale);
      fill(ly.wv[l], scale);
      fill(ly.wo[l], scale);
    }
  } else {
    fill(ly.wx, scale);
    fill(ly.wh, scale);
    if (config_.torso == TorsoKind::kLstm) view(params_, ly.b).middleRows(h, h).setOnes();
  }
  fill(ly.w1, scale);
  fill(ly.w2, scale);
  fill(ly.head_w, scale);
}

double NeuralModel::run(const Batch& batch, VectorXd* grad, std::vector<double>* probs) const {
  const Layout& ly = *layout_;
  if (grad) grad->setZero(ly.size);
  if (batch.empty()) return 0.0;
  const int nb = static_cast<int>(batch.size());
  const int nt = static_cast<int>(batch.front().tokens.size());
  if (nt < 1) throw std::invalid_argument("model: empty training sequence");
  if (config_.torso == TorsoKind::kAttention && nt > config_.max_seq_len) {
    throw std::invalid_argument("model: sequence longer than max_seq_len");
  }
  const Index h = config_.hidden;
  const Index n = static_cast<Index>(nt) * nb;

  Cache c;
  c.batch = nb;
  c.steps = nt;
  c.symbols.resize(n);
  Eigen::RowVectorXd target(n), weight(n);
  double scored = 0.0;
  for (int b = 0; b < nb; ++b) {
    const auto& ex = batch[b];
    if (static_cast<int>(ex.tokens.size()) != nt) throw std::invalid_argument("model: ragged batch");
    if (!ex.scored.empty() && ex.scored.size() != ex.tokens.size()) {
      throw std::invalid_argument("model: score mask length mismatch");
    }
    for (int t = 0; t < nt; ++t) {
      const Index col = static_cast<Index>(t) * nb + b;
      const int sym = t == 0 ? config_.vocab : ex.tokens[t - 1];
      if (t > 0 && sym >= config_.vocab) throw std::invalid_argument("model: symbol outside vocabulary");
      c.symbols[col] = sym;
      const bool on = ex.scored.empty() || ex.scored[t];
      if (on && ex.tokens[t] > 1) throw std::invalid_argument("model: scored target must be binary");
      target[col] = on ? ex.tokens[t] : 0.0;
      weight[col] = on ? 1.0 : 0.0;
      scored += weight[col];
    }
  }

  const auto emb = view(ly.emb);
  c.embedded.resize(h, n);
  for (Index col = 0; col < n; ++col) {
    c.embedded.col(col) = emb.col(c.symbols[col]);
    if (config_.torso == TorsoKind::kAttention) c.embedded.col(col) += view(ly.pos).col(col / nb);
  }

  // Torso forward.
  c.torso_out.resize(h, n);
  if (config_.torso == TorsoKind::kAttention) {
    const int heads = config_.heads;
    const Index d = h / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    c.attention.assign(nb, {});
    for (int b = 0; b < nb; ++b) {
      MatrixXd x(h, nt);
      for (int t = 0; t < nt; ++t) x.col(t) = c.embedded.col(static_cast<Index>(t) * nb + b);
      auto& layers = c.attention[b];
      layers.resize(config_.layers);
      for (int l = 0; l < config_.layers; ++l) {
        auto& lc = layers[l];
        lc.in = x;
        lc.q = view(ly.wq[l]) * x;
        lc.k = view(ly.wk[l]) * x;
        lc.v = view(ly.wv[l]) * x;
        lc.mixed.resize(h, nt);
        lc.probs.resize(heads);
        for (int hh = 0; hh < heads; ++hh) {
          MatrixXd s = lc.q.middleRows(hh * d, d).transpose() * lc.k.middleRows(hh * d, d) * inv_sqrt_d;
          causal_softmax(s);
          lc.mixed.middleRows(hh * d, d) = lc.v.middleRows(hh * d, d) * s.transpose();
          lc.probs[hh] = std::move(s);
        }
        x = view(ly.wo[l]) * lc.mixed;
      }
      for (int t = 0; t < nt; ++t) c.torso_out.col(static_cast<Index>(t) * nb + b) = x.col(t);
    }
  } else {
    const bool lstm = config_.torso == TorsoKind::kLstm;
    const auto wx = view(ly.wx);
    const auto wh = view(ly.wh);
    const auto bias = view(ly.b);
    if (lstm) {
      c.gates.resize(4 * h, n);
      c.cell.resize(h, n);
      c.cell_tanh.resize(h, n);
    }
    MatrixXd h_prev = MatrixXd::Zero(h, nb);
    MatrixXd c_prev = MatrixXd::Zero(h, nb);
    for (int t = 0; t < nt; ++t) {
      const Index c0 = static_cast<Index>(t) * nb;
      MatrixXd z = wx * c.embedded.middleCols(c0, nb) + wh * h_prev;
      z.colwise() += bias.col(0);
      if (lstm) {
        MatrixXd g(4 * h, nb);
        g.topRows(2 * h) = sigmoid(z.topRows(2 * h));
        g.middleRows(2 * h, h) = z.middleRows(2 * h, h).array().tanh().matrix();
        g.bottomRows(h) = sigmoid(z.bottomRows(h));
        MatrixXd cell = g.middleRows(h, h).cwiseProduct(c_prev) + g.topRows(h).cwiseProduct(g.middleRows(2 * h, h));
        MatrixXd cell_tanh = cell.array().tanh().matrix();
        h_prev = g.bottomRows(h).cwiseProduct(cell_tanh);
        c.gates.middleCols(c0, nb) = g;
        c.cell.middleCols(c0, nb) = cell;
        c.cell_tanh.middleCols(c0, nb) = cell_tanh;
        c_prev = std::move(cell);
      } else {
        h_prev = z.array().tanh().matrix();
      }
      c.torso_out.middleCols(c0, nb) = h_prev;
    }
  }

  // Residual MLP and head.
  const auto w1 = view(ly.w1);
  const auto w2 = view(ly.w2);
  const auto hw = view(ly.head_w);
  const double hb = view(ly.head_b)(0, 0);
  MatrixXd a = c.embedded + c.torso_out;
  c.mlp_pre = w1 * a;
  c.mlp_pre.colwise() += view(ly.b1).col(0);
  c.mlp_act = c.mlp_pre.unaryExpr([](double x) { return gelu(x); });
  c.head_in = w2 * c.mlp_act;
  c.head_in.colwise() += view(ly.b2).col(0);
  c.head_in += a;
  const Eigen::RowVectorXd logits = (hw * c.head_in).array() + hb;

  if (probs) {
    probs->resize(n);
    for (Index col = 0; col < n; ++col) (*probs)[col] = sigmoid(logits[col]);
  }
  if (scored == 0.0) return 0.0;

  double loss = 0.0;
  for (Index col = 0; col < n; ++col) {
    if (weight[col] != 0.0) loss += softplus(logits[col]) - target[col] * logits[col];
  }
  loss /= scored;
  if (!grad) return loss;

  // Backward.
  VectorXd& g = *grad;
  Eigen::RowVectorXd dlogit(n);
  for (Index col = 0; col < n; ++col) dlogit[col] = weight[col] * (sigmoid(logits[col]) - target[col]) / scored;
  view(g, ly.head_w) = dlogit * c.head_in.transpose();
  view(g, ly.head_b)(0, 0) = dlogit.sum();
  const MatrixXd d_head_in = hw.transpose() * dlogit;
  view(g, ly.w2) = d_head_in * c.mlp_act.transpose();
  view(g, ly.b2) = d_head_in.rowwise().sum();
  MatrixXd d_pre = w2.transpose() * d_head_in;
  d_pre.array() *= c.mlp_pre.unaryExpr([](double x) { return gelu_grad(x); }).array();
  view(g, ly.w1) = d_pre * a.transpose();
  view(g, ly.b1) = d_pre.rowwise().sum();
  const MatrixXd d_a = d_head_in + w1.transpose() * d_pre;
  MatrixXd d_embedded = d_a;

  if (config_.torso == TorsoKind::kAttention) {
    const int heads = config_.heads;
    const Index d = h / heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    for (int b = 0; b < nb; ++b) {
      MatrixXd dy(h, nt);
      for (int t = 0; t < nt; ++t) dy.col(t) = d_a.col(static_cast<Index>(t) * nb + b);
      for (int l = config_.layers - 1; l >= 0; --l) {
        const auto& lc = c.attention[b][l];
        view(g, ly.wo[l]) += dy * lc.mixed.transpose();
        const MatrixXd d_mixed = view(ly.wo[l]).transpose() * dy;
        MatrixXd dq(h, nt), dk(h, nt), dv(h, nt);
        for (int hh = 0; hh < heads; ++hh) {
          const MatrixXd& p = lc.probs[hh];
          const auto d_out = d_mixed.middleRows(hh * d, d);
          dv.middleRows(hh * d, d) = d_out * p;
          const MatrixXd dp = d_out.transpose() * lc.v.middleRows(hh * d, d);
          const Eigen::VectorXd row_dot = p.cwiseProduct(dp).rowwise().sum();
          MatrixXd ds = p.cwiseProduct(dp.colwise() - row_dot) * inv_sqrt_d;
          dq.middleRows(hh * d, d) = lc.k.middleRows(hh * d, d) * ds.transpose();
          dk.middleRows(hh * d, d) = lc.q.middleRows(hh * d, d) * ds;
        }
        view(g, ly.wq[l]) += dq * lc.in.transpose();
        view(g, ly.wk[l]) += dk * lc.in.transpose();
        view(g, ly.wv[l]) += dv * lc.in.transpose();
        dy = view(ly.wq[l]).transpose() * dq + view(ly.wk[l]).transpose() * dk + view(ly.wv[l]).transpose() * dv;
      }
      for (int t = 0; t < nt; ++t) d_embedded.col(static_cast<Index>(t) * nb + b) += dy.col(t);
    }
  } else {
    const bool lstm = config_.torso == TorsoKind::kLstm;
    const auto wx = view(ly.wx);
    const auto wh = view(ly.wh);
    auto g_wx = view(g, ly.wx);
    auto g_wh = view(g, ly.wh);
    auto g_b = view(g, ly.b);
    MatrixXd dh_next = MatrixXd::Zero(h, nb);
    MatrixXd dc_next = MatrixXd::Zero(h, nb);
    const Index gate_rows = lstm ? 4 * h : h;
    MatrixXd dz(gate_rows, nb);
    for (int t = nt - 1; t >= 0; --t) {
      const Index c0 = static_cast<Index>(t) * nb;
      const MatrixXd dh = d_a.middleCols(c0, nb) + dh_next;
      if (lstm) {
        const auto gt = c.gates.middleCols(c0, nb);
        const Eigen::ArrayXXd in = gt.topRows(h);
        const Eigen::ArrayXXd fg = gt.middleRows(h, h);
        const Eigen::ArrayXXd cand = gt.middleRows(2 * h, h);
        const Eigen::ArrayXXd out = gt.bottomRows(h);
        const Eigen::ArrayXXd ct = c.cell_tanh.middleCols(c0, nb);
        const MatrixXd c_prev = t > 0 ? MatrixXd(c.cell.middleCols(c0 - nb, nb)) : MatrixXd::Zero(h, nb);
        const Eigen::ArrayXXd dc = dc_next.array() + dh.array() * out * (1.0 - ct * ct);
        dz.topRows(h) = (dc * cand * in * (1.0 - in)).matrix();
        dz.middleRows(h, h) = (dc * c_prev.array() * fg * (1.0 - fg)).matrix();
        dz.middleRows(2 * h, h) = (dc * in * (1.0 - cand * cand)).matrix();
        dz.bottomRows(h) = (dh.array() * ct * out * (1.0 - out)).matrix();
        dc_next = (dc * fg).matrix();
      } else {
        const Eigen::ArrayXXd ht = c.torso_out.middleCols(c0, nb);
        dz = (dh.array() * (1.0 - ht * ht)).matrix();
      }
      g_wx += dz * c.embedded.middleCols(c0, nb).transpose();
      if (t > 0) g_wh += dz * c.torso_out.middleCols(c0 - nb, nb).transpose();
      g_b += dz.rowwise().sum();
      d_embedded.middleCols(c0, nb) += wx.transpose() * dz;
      dh_next = wh.transpose() * dz;
    }
  }

  auto g_emb = view(g, ly.emb);
  for (Index col = 0; col < n; ++col) {
    g_emb.col(c.symbols[col]) += d_embedded.col(col);
    if (config_.torso == TorsoKind::kAttention) view(g, ly.pos).col(col / nb) += d_embedded.col(col);
  }
  return loss;
}

std::vector<double> NeuralModel::forward(std::span<const Token> inputs) const {
  TrainExample ex;
  ex.tokens.assign(inputs.begin(), inputs.end());
  ex.tokens.push_back(0);
  ex.scored.assign(ex.tokens.size(), 0);
  std::vector<double> probs;
  run(Batch{ex}, nullptr, &probs);
  return probs;
}

double NeuralModel::loss(const Batch& batch) const { return run(batch, nullptr, nullptr); }

double NeuralModel::loss_and_grad(const Batch& batch, VectorXd& grad) const { return run(batch, &grad, nullptr); }

VectorXd NeuralModel::head_input(const VectorXd& embedded, const VectorXd& torso_out) const {
  const Layout& ly = *layout_;
  const VectorXd a = embedded + torso_out;
  const VectorXd pre = view(ly.w1) * a + view(ly.b1).col(0);
  return a + view(ly.w2) * pre.unaryExpr([](double x) { return gelu(x); }) + view(ly.b2).col(0);
}

NeuralModel::Stream NeuralModel::start() const {
  Stream s;
  const Index h = config_.hidden;
  if (config_.torso == TorsoKind::kAttention) {
    s.keys.assign(config_.layers, MatrixXd(h, 0));
    s.values.assign(config_.layers, MatrixXd(h, 0));
  } else {
    s.hidden = VectorXd::Zero(h);
    s.cell = VectorXd::Zero(h);
  }
  step(s, static_cast<Token>(config_.vocab));
  return s;
}

void NeuralModel::step(Stream& s, Token symbol) const {
  const Layout& ly = *layout_;
  const Index h = config_.hidden;
  if (symbol > config_.vocab) throw std::invalid_argument("model: symbol outside vocabulary");
  VectorXd e = view(ly.emb).col(symbol);
  VectorXd u;
  if (config_.torso == TorsoKind::kAttention) {
    if (s.position >= config_.max_seq_len) throw std::out_of_range("model: stream exceeds max_seq_len");
    e += view(ly.pos).col(s.position);
    const Index d = h / config_.heads;
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    VectorXd x = e;
    for (int l = 0; l < config_.layers; ++l) {
      const VectorXd q = view(ly.wq[l]) * x;
      auto& keys = s.keys[l];
      auto& values = s.values[l];
      keys.conservativeResize(h, keys.cols() + 1);
      values.conservativeResize(h, values.cols() + 1);
      keys.col(keys.cols() - 1) = view(ly.wk[l]) * x;
      values.col(values.cols() - 1) = view(ly.wv[l]) * x;
      VectorXd mixed(h);
      for (int hh = 0; hh < config_.heads; ++hh) {
        Eigen::RowVectorXd sc = q.segment(hh * d, d).transpose() * keys.middleRows(hh * d, d) * inv_sqrt_d;
        const double m = sc.maxCoeff();
        sc = (sc.array() - m).exp();
        sc /= sc.sum();
        mixed.segment(hh * d, d) = values.middleRows(hh * d, d) * sc.transpose();
      }
      x = view(ly.wo[l]) * mixed;
    }
    u = std::move(x);
  } else {
    VectorXd z = view(ly.wx) * e + view(ly.wh) * s.hidden + view(ly.b).col(0);
    if (config_.torso == TorsoKind::kLstm) {
      const VectorXd in = z.head(h).unaryExpr([](double x) { return sigmoid(x); });
      const VectorXd fg = z.segment(h, h).unaryExpr([](double x) { return sigmoid(x); });
      const VectorXd cand = z.segment(2 * h, h).array().tanh().matrix();
      const VectorXd out = z.tail(h).unaryExpr([](double x) { return sigmoid(x); });
      s.cell = fg.cwiseProduct(s.cell) + in.cwiseProduct(cand);
      s.hidden = out.cwiseProduct(s.cell.array().tanh().matrix());
    } else {
      s.hidden = z.array().tanh().matrix();
    }
    u = s.hidden;
  }
  const VectorXd v = head_input(e, u);
  s.prob_one = sigmoid((view(ly.head_w) * v)(0, 0) + view(ly.head_b)(0, 0));
  ++s.position;
}

NeuralPredictor::NeuralPredictor(std::shared_ptr<const NeuralModel> model) : model_(std::move(model)) {
  if (!model_) throw std::invalid_argument("NeuralPredictor: null model");
  reset();
}

void NeuralPredictor::reset() { stream_ = model_->start(); }

void NeuralPredictor::observe(Token t) { model_->step(stream_, t); }

std::string NeuralPredictor::name() const { return "neural:" + to_string(model_->config().torso); }

std::vector<double> NeuralPredictor::snapshot() const {
  std::vector<double> out = {static_cast<double>(stream_.position), stream_.prob_one};
  auto append = [&out](const auto& m) { out.insert(out.end(), m.data(), m.data() + m.size()); };
  if (model_->config().torso == TorsoKind::kAttention) {
    for (std::size_t l = 0; l < stream_.keys.size(); ++l) {
      append(stream_.keys[l]);
      append(stream_.values[l]);
    }
  } else {
    append(stream_.hidden);
    append(stream_.cell);
  }
  return out;
}

void NeuralPredictor::restore(std::span<const double> state) {
  const auto& cfg = model_->config();
  const Index h = cfg.hidden;
  if (state.size() < 2) throw std::invalid_argument("restore: truncated neural state");
  stream_.position = static_cast<int>(state[0]);
  stream_.prob_one = state[1];
  std::size_t at = 2;
  auto take = [&](Index count) {
    if (at + count > state.size()) throw std::invalid_argument("restore: truncated neural state");
    const double* p = state.data() + at;
    at += count;
    return p;
  };
  if (cfg.torso == TorsoKind::kAttention) {
    stream_.keys.resize(cfg.layers);
    stream_.values.resize(cfg.layers);
    for (int l = 0; l < cfg.layers; ++l) {
      stream_.keys[l] = Eigen::Map<const MatrixXd>(take(h * stream_.position), h, stream_.position);
      stream_.values[l] = Eigen::Map<const MatrixXd>(take(h * stream_.position), h, stream_.position);
    }
  } else {
    stream_.hidden = Eigen::Map<const VectorXd>(take(h), h);
    stream_.cell = Eigen::Map<const VectorXd>(take(h), h);
  }
  if (at != state.size()) throw std::invalid_argument("restore: neural state size mismatch");
}

}  // namespace binprompt
