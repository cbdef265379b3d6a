#pragma once

// Desk-scale inductive node classifiers trained per shard.
//
// SGC:     logits = S^K X W + b,  S = Dh^{-1/2} (A + I) Dh^{-1/2}, Dh the degrees of A + I.
// MeanGNN: h1 = relu([x_u | mean_{v in N(u)} x_v] W1 + b1)
//          logits = [h1_u | mean_{v in N(u)} h1_v] W2 + b2
//
// Loss is mean softmax cross-entropy over the loss-masked nodes plus
// (weight_decay / 2) times the squared norm of the weight matrices (not biases).
// Training is plain full-batch gradient descent in double precision.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "guide/errors.hpp"
#include "guide/graph.hpp"
#include "guide/repair.hpp"
#include "guide/rng.hpp"
#include "guide/text_io.hpp"

namespace guide {

enum class ModelKind { SGC, MeanGNN };

inline std::string to_string(ModelKind k) { return k == ModelKind::SGC ? "sgc" : "meangnn"; }

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "sgc") return ModelKind::SGC;
  if (s == "meangnn") return ModelKind::MeanGNN;
  throw ArgumentError("unknown model kind '" + std::string(s) + "'");
}

struct TrainConfig {
  double learning_rate = 0.01;
  int epochs = 200;
  double weight_decay = 5e-4;
  int sgc_steps = 2;
  int hidden = 64;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ArgumentError("learning rate must be positive");
    if (epochs < 0) throw ArgumentError("epoch count must be nonnegative");
    if (!(weight_decay >= 0.0)) throw ArgumentError("weight decay must be nonnegative");
    if (sgc_steps < 1) throw ArgumentError("SGC propagation steps must be at least 1");
    if (hidden < 1) throw ArgumentError("hidden width must be positive");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Parameters of one shard classifier. Tensors in order:
/// SGC {W (d x h), b (1 x h)}; MeanGNN {W1 (2d x hidden), b1 (1 x hidden), W2 (2 hidden x h), b2 (1 x h)}.
struct ModelParams {
  ModelKind kind = ModelKind::SGC;
  int feature_dim = 0;
  int num_classes = 0;
  TrainConfig hyper;
  std::uint64_t seed = 0;
  std::vector<Eigen::MatrixXd> tensors;
  double final_loss = 0.0;

  bool is_weight(std::size_t t) const { return t % 2 == 0; }

  Eigen::Index num_parameters() const {
    Eigen::Index s = 0;
    for (const auto& t : tensors) s += t.size();
    return s;
  }

  bool all_finite() const {
    return std::all_of(tensors.begin(), tensors.end(), [](const auto& t) { return t.allFinite(); });
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.kind != b.kind || a.feature_dim != b.feature_dim || a.num_classes != b.num_classes ||
        !(a.hyper == b.hyper) || a.seed != b.seed || a.tensors.size() != b.tensors.size())
      return false;
    for (std::size_t t = 0; t < a.tensors.size(); ++t)
      if (a.tensors[t].rows() != b.tensors[t].rows() || a.tensors[t].cols() != b.tensors[t].cols() ||
          a.tensors[t] != b.tensors[t])
        return false;
    // bitwise comparison, so that -0.0 and 0.0 or NaN payloads are not conflated
    return std::memcmp(&a.final_loss, &b.final_loss, sizeof(double)) == 0;
  }
};

inline std::vector<std::pair<Eigen::Index, Eigen::Index>> tensor_shapes(ModelKind kind, int d, int h, int hidden) {
  if (kind == ModelKind::SGC) return {{d, h}, {1, h}};
  return {{2 * d, hidden}, {1, hidden}, {2 * hidden, h}, {1, h}};
}

inline ModelParams zero_params(ModelKind kind, int feature_dim, int num_classes, const TrainConfig& hyper,
                               std::uint64_t seed = 0) {
  hyper.validate();
  ModelParams p{kind, feature_dim, num_classes, hyper, seed, {}, 0.0};
  for (auto [r, c] : tensor_shapes(kind, feature_dim, num_classes, hyper.hidden))
    p.tensors.push_back(Eigen::MatrixXd::Zero(r, c));
  return p;
}

/// Seeded uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)]; a bias uses its layer's fan-in.
inline ModelParams init_params(ModelKind kind, int feature_dim, int num_classes, const TrainConfig& hyper,
                               std::uint64_t seed) {
  ModelParams p = zero_params(kind, feature_dim, num_classes, hyper, seed);
  Rng rng(seed);
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    const double fan_in = static_cast<double>(p.tensors[t - (t % 2)].rows());
    const double bound = 1.0 / std::sqrt(std::max(1.0, fan_in));
    std::uniform_real_distribution<double> unif(-bound, bound);
    auto& m = p.tensors[t];
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = unif(rng);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Propagation operators

/// Dh^{-1/2} (A + I) Dh^{-1/2} with Dh the weighted degrees of A + I.
inline SparseMatrix sgc_operator(const SparseMatrix& adjacency) {
  const Eigen::Index n = adjacency.rows();
  SparseMatrix S = adjacency;
  for (Eigen::Index i = 0; i < n; ++i) S.coeffRef(i, i) += 1.0;
  S.makeCompressed();
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) inv_sqrt(i) = 1.0 / std::sqrt(S.row(i).sum());
  for (Eigen::Index i = 0; i < n; ++i)
    for (SparseMatrix::InnerIterator it(S, i); it; ++it) it.valueRef() *= inv_sqrt(i) * inv_sqrt(it.col());
  return S;
}

inline Eigen::MatrixXd sgc_propagate(const SparseMatrix& adjacency, const Eigen::MatrixXd& X, int K) {
  if (K < 1) throw ArgumentError("SGC propagation steps must be at least 1");
  SparseMatrix S = sgc_operator(adjacency);
  Eigen::MatrixXd Z = X;
  for (int k = 0; k < K; ++k) Z = S * Z;
  return Z;
}

/// Row i averages the neighbors of i with equal weight; isolated rows are zero.
inline SparseMatrix mean_operator(const SparseMatrix& adjacency) {
  SparseMatrix M = adjacency;
  for (Eigen::Index i = 0; i < M.outerSize(); ++i) {
    const int deg = static_cast<int>(M.outerIndexPtr()[i + 1] - M.outerIndexPtr()[i]);
    for (SparseMatrix::InnerIterator it(M, i); it; ++it) it.valueRef() = 1.0 / deg;
  }
  return M;
}

/// Graph-dependent inputs of a model, computed once per graph.
struct ModelInputs {
  ModelKind kind = ModelKind::SGC;
  Eigen::MatrixXd X;  // raw features (MeanGNN) or S^K X (SGC)
  SparseMatrix mean;  // MeanGNN only
};

inline ModelInputs prepare_inputs(ModelKind kind, const SparseMatrix& adjacency, const Eigen::MatrixXd& X,
                                  int sgc_steps) {
  ModelInputs in;
  in.kind = kind;
  if (kind == ModelKind::SGC) {
    in.X = sgc_propagate(adjacency, X, sgc_steps);
  } else {
    in.X = X;
    in.mean = mean_operator(adjacency);
  }
  return in;
}

// ---------------------------------------------------------------------------
// Forward / backward

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  Eigen::MatrixXd P(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double m = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - m).exp();
    P.row(i) = e / e.sum();
  }
  return P;
}

struct ForwardCache {
  Eigen::MatrixXd agg1, z1, h1, agg2;
  Eigen::MatrixXd logits;
};

inline ForwardCache forward(const ModelParams& p, const ModelInputs& in) {
  if (in.X.cols() != p.feature_dim)
    throw ArgumentError("feature dimension " + std::to_string(in.X.cols()) + " does not match model dimension " +
                        std::to_string(p.feature_dim));
  ForwardCache c;
  const Eigen::Index n = in.X.rows();
  if (p.kind == ModelKind::SGC) {
    c.logits = in.X * p.tensors[0];
    c.logits.rowwise() += p.tensors[1].row(0);
    return c;
  }
  const int d = p.feature_dim;
  const int hid = static_cast<int>(p.tensors[1].cols());
  c.agg1 = in.mean * in.X;
  c.z1 = in.X * p.tensors[0].topRows(d) + c.agg1 * p.tensors[0].bottomRows(d);
  c.z1.rowwise() += p.tensors[1].row(0);
  c.h1 = c.z1.cwiseMax(0.0);
  c.agg2 = in.mean * c.h1;
  c.logits = c.h1 * p.tensors[2].topRows(hid) + c.agg2 * p.tensors[2].bottomRows(hid);
  c.logits.rowwise() += p.tensors[3].row(0);
  (void)n;
  return c;
}

struct LossAndGradient {
  double loss = 0.0;
  std::vector<Eigen::MatrixXd> grads;
};

/// Masked cross-entropy plus weight decay, and its gradient. Labels of unmasked
/// nodes are never read.
inline LossAndGradient loss_and_gradient(const ModelParams& p, const ModelInputs& in, const std::vector<int>& labels,
                                         const std::vector<bool>& mask) {
  const Eigen::Index n = in.X.rows();
  if (static_cast<Eigen::Index>(labels.size()) != n || static_cast<Eigen::Index>(mask.size()) != n)
    throw ArgumentError("labels and mask must have one entry per node");
  const auto m = std::count(mask.begin(), mask.end(), true);
  if (m == 0) throw ArgumentError("no node in the loss mask");

  ForwardCache c = forward(p, in);
  Eigen::MatrixXd prob = softmax_rows(c.logits);
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(n, p.num_classes);
  LossAndGradient out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    const int y = labels[i];
    if (y < 0 || y >= p.num_classes) throw ArgumentError("label out of range in loss mask");
    const double lse = std::log(((c.logits.row(i).array() - c.logits.row(i).maxCoeff()).exp()).sum()) +
                       c.logits.row(i).maxCoeff();
    out.loss += lse - c.logits(i, y);
    G.row(i) = prob.row(i);
    G(i, y) -= 1.0;
  }
  out.loss /= static_cast<double>(m);
  G /= static_cast<double>(m);

  const double wd = p.hyper.weight_decay;
  for (std::size_t t = 0; t < p.tensors.size(); t += 2) out.loss += 0.5 * wd * p.tensors[t].squaredNorm();

  out.grads.resize(p.tensors.size());
  if (p.kind == ModelKind::SGC) {
    out.grads[0] = in.X.transpose() * G + wd * p.tensors[0];
    out.grads[1] = G.colwise().sum();
    return out;
  }
  const int d = p.feature_dim;
  const int hid = static_cast<int>(p.tensors[1].cols());
  Eigen::MatrixXd dW2(2 * hid, p.num_classes);
  dW2.topRows(hid) = c.h1.transpose() * G;
  dW2.bottomRows(hid) = c.agg2.transpose() * G;
  out.grads[2] = dW2 + wd * p.tensors[2];
  out.grads[3] = G.colwise().sum();
  Eigen::MatrixXd dH1 = G * p.tensors[2].topRows(hid).transpose();
  Eigen::MatrixXd dAgg2 = G * p.tensors[2].bottomRows(hid).transpose();
  dH1 += in.mean.transpose() * dAgg2;
  Eigen::MatrixXd dZ1 = dH1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
  Eigen::MatrixXd dW1(2 * d, hid);
  dW1.topRows(d) = in.X.transpose() * dZ1;
  dW1.bottomRows(d) = c.agg1.transpose() * dZ1;
  out.grads[0] = dW1 + wd * p.tensors[0];
  out.grads[1] = dZ1.colwise().sum();
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainReport {
  ModelParams params;
  std::vector<double> loss_history;  // loss before each update, then the final loss
  bool single_class = false;
};

inline ModelInputs shard_inputs(const RepairedSubgraph& rs, ModelKind kind, int sgc_steps) {
  return prepare_inputs(kind, rs.local_adjacency(), rs.features, sgc_steps);
}

/// Full-batch gradient descent over the shard's real nodes; synthetic nodes take part
/// in propagation only.
inline TrainReport train_shard_detailed(const RepairedSubgraph& rs, const ModelParams& params0) {
  params0.hyper.validate();
  if (rs.num_real() == 0) throw ArgumentError("shard " + std::to_string(rs.shard_id) + " has no real nodes");
  auto in = shard_inputs(rs, params0.kind, params0.hyper.sgc_steps);
  auto mask = rs.loss_mask();
  TrainReport rep;
  rep.params = params0;
  {
    std::vector<int> seen;
    for (int k = 0; k < rs.num_real(); ++k) seen.push_back(rs.labels[k]);
    std::sort(seen.begin(), seen.end());
    rep.single_class = std::unique(seen.begin(), seen.end()) - seen.begin() == 1;
  }
  const double lr = params0.hyper.learning_rate;
  for (int epoch = 0; epoch < params0.hyper.epochs; ++epoch) {
    auto lg = loss_and_gradient(rep.params, in, rs.labels, mask);
    rep.loss_history.push_back(lg.loss);
    for (std::size_t t = 0; t < rep.params.tensors.size(); ++t) rep.params.tensors[t] -= lr * lg.grads[t];
    if (!rep.params.all_finite())
      throw NumericalError("shard " + std::to_string(rs.shard_id) + ": parameters became non-finite at epoch " +
                           std::to_string(epoch));
  }
  rep.params.final_loss = loss_and_gradient(rep.params, in, rs.labels, mask).loss;
  rep.loss_history.push_back(rep.params.final_loss);
  return rep;
}

inline ModelParams train_shard(const RepairedSubgraph& rs, const ModelParams& params0) {
  return train_shard_detailed(rs, params0).params;
}

/// Max relative error between the analytic gradient and central differences over at
/// most `max_checked` randomly chosen parameters. The relative error of one entry is
/// |a - f| / max(|a| + |f|, 1e-10).
inline double grad_check(const ModelParams& params, const RepairedSubgraph& rs, double epsilon,
                         std::uint64_t seed = 0, int max_checked = 50) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) throw ArgumentError("epsilon must lie in [1e-7, 1e-3]");
  auto in = shard_inputs(rs, params.kind, params.hyper.sgc_steps);
  auto mask = rs.loss_mask();
  auto analytic = loss_and_gradient(params, in, rs.labels, mask).grads;

  std::vector<std::pair<std::size_t, Eigen::Index>> all;
  for (std::size_t t = 0; t < params.tensors.size(); ++t)
    for (Eigen::Index k = 0; k < params.tensors[t].size(); ++k) all.emplace_back(t, k);
  Rng rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  if (static_cast<int>(all.size()) > max_checked) all.resize(max_checked);

  double worst = 0.0;
  ModelParams probe = params;
  for (auto [t, k] : all) {
    double& slot = probe.tensors[t].data()[k];
    const double orig = slot;
    slot = orig + epsilon;
    const double up = loss_and_gradient(probe, in, rs.labels, mask).loss;
    slot = orig - epsilon;
    const double down = loss_and_gradient(probe, in, rs.labels, mask).loss;
    slot = orig;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double a = analytic[t].data()[k];
    worst = std::max(worst, std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-10));
  }
  return worst;
}

// ---------------------------------------------------------------------------
// Inference

struct Prediction {
  Eigen::MatrixXd probs;
};

/// Inductive inference over the test graph's own edges.
inline Prediction predict(const ModelParams& params, const LabeledGraph& test_graph) {
  if (test_graph.feature_dim() != params.feature_dim)
    throw ArgumentError("test graph feature dimension " + std::to_string(test_graph.feature_dim()) +
                        " does not match model dimension " + std::to_string(params.feature_dim));
  auto in = prepare_inputs(params.kind, test_graph.adjacency(), test_graph.features(), params.hyper.sgc_steps);
  return {softmax_rows(forward(params, in).logits)};
}

/// Weighted average sum_i w_i P_i of per-shard predictions.
inline Prediction aggregate_predictions(const std::vector<Prediction>& preds, const std::vector<double>& weights) {
  if (preds.empty() || preds.size() != weights.size())
    throw ArgumentError("need one weight per prediction");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw ArgumentError("weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ArgumentError("weights must sum to 1");
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(preds[0].probs.rows(), preds[0].probs.cols());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].probs.rows() != acc.rows() || preds[i].probs.cols() != acc.cols())
      throw ArgumentError("prediction shapes differ");
    acc += weights[i] * preds[i].probs;
  }
  return {acc};
}

// ---------------------------------------------------------------------------
// Model files

inline constexpr int kModelFormatVersion = 1;

inline std::string format_model(const ModelParams& p) {
  std::string out = "guide-model " + std::to_string(kModelFormatVersion) + '\n';
  out += "kind " + to_string(p.kind) + '\n';
  out += "feature_dim " + std::to_string(p.feature_dim) + '\n';
  out += "num_classes " + std::to_string(p.num_classes) + '\n';
  out += "hidden " + std::to_string(p.hyper.hidden) + '\n';
  out += "sgc_steps " + std::to_string(p.hyper.sgc_steps) + '\n';
  out += "learning_rate " + io::format_exact(p.hyper.learning_rate) + '\n';
  out += "epochs " + std::to_string(p.hyper.epochs) + '\n';
  out += "weight_decay " + io::format_exact(p.hyper.weight_decay) + '\n';
  out += "seed " + std::to_string(p.seed) + '\n';
  out += "final_loss " + io::format_exact(p.final_loss) + '\n';
  for (std::size_t t = 0; t < p.tensors.size(); ++t) {
    const auto& m = p.tensors[t];
    out += "tensor " + std::to_string(t) + ' ' + std::to_string(m.rows()) + ' ' + std::to_string(m.cols()) + '\n';
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      for (Eigen::Index j = 0; j < m.cols(); ++j) {
        if (j) out += ' ';
        out += io::format_exact(m(i, j));
      }
      out += '\n';
    }
  }
  out += "end\n";
  return out;
}

inline ModelParams parse_model(std::string_view text, const std::string& source = "model") {
  auto lines = io::split_lines(text);
  std::size_t k = 0;
  auto next = [&]() -> std::vector<std::string_view> {
    if (k >= lines.size()) throw LoadError(source + ": truncated model file");
    return io::split_ws(lines[k++]);
  };
  auto header = next();
  int version = 0;
  if (header.size() != 2 || header[0] != "guide-model" || !io::parse_number(header[1], version))
    throw LoadError(source + ": not a model file");
  if (version > kModelFormatVersion)
    throw VersionError(source + ": model format version " + std::to_string(version) + " is newer than supported " +
                       std::to_string(kModelFormatVersion));
  ModelParams p;
  auto field = [&](std::string_view name, auto& out) {
    auto tok = next();
    if (tok.size() != 2 || tok[0] != name || !io::parse_number(tok[1], out))
      throw LoadError(source + ":" + std::to_string(k) + ": expected field '" + std::string(name) + "'");
  };
  {
    auto tok = next();
    if (tok.size() != 2 || tok[0] != "kind") throw LoadError(source + ": expected model kind");
    try {
      p.kind = parse_model_kind(tok[1]);
    } catch (const ArgumentError& e) {
      throw LoadError(source + ": " + e.what());
    }
  }
  field("feature_dim", p.feature_dim);
  field("num_classes", p.num_classes);
  field("hidden", p.hyper.hidden);
  field("sgc_steps", p.hyper.sgc_steps);
  field("learning_rate", p.hyper.learning_rate);
  field("epochs", p.hyper.epochs);
  field("weight_decay", p.hyper.weight_decay);
  field("seed", p.seed);
  field("final_loss", p.final_loss);
  auto shapes = tensor_shapes(p.kind, p.feature_dim, p.num_classes, p.hyper.hidden);
  for (std::size_t t = 0; t < shapes.size(); ++t) {
    auto tok = next();
    Eigen::Index r = 0, c = 0;
    std::size_t idx = 0;
    if (tok.size() != 4 || tok[0] != "tensor" || !io::parse_number(tok[1], idx) || !io::parse_number(tok[2], r) ||
        !io::parse_number(tok[3], c) || idx != t)
      throw LoadError(source + ": malformed tensor header");
    if (r != shapes[t].first || c != shapes[t].second)
      throw LoadError(source + ": tensor " + std::to_string(t) + " has shape " + std::to_string(r) + "x" +
                      std::to_string(c) + ", expected " + std::to_string(shapes[t].first) + "x" +
                      std::to_string(shapes[t].second));
    Eigen::MatrixXd m(r, c);
    for (Eigen::Index i = 0; i < r; ++i) {
      auto row = next();
      if (static_cast<Eigen::Index>(row.size()) != c) throw LoadError(source + ": short tensor row");
      for (Eigen::Index j = 0; j < c; ++j)
        if (!io::parse_number(row[j], m(i, j))) throw LoadError(source + ": bad tensor value");
    }
    p.tensors.push_back(std::move(m));
  }
  auto tail = next();
  if (tail.size() != 1 || tail[0] != "end") throw LoadError(source + ": missing end marker");
  return p;
}

}  // namespace guide
