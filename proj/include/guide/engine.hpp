#pragma once

// Sharded ensemble lifecycle: partition, repair, train, weight, unlearn.
//
// The partition is fixed once trained. Every shard owns a repaired subgraph, a model
// trained from its own seed, and (once a similarity reference is attached) a raw
// kernel value. Unlearning shrinks and retrains exactly the shards whose repaired
// subgraph changes.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <future>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <thread>
#include <string>
#include <utility>
#include <vector>

#include <zlib.h>

#include <Eigen/Dense>
#include <json.hpp>

#include "guide/errors.hpp"
#include "guide/gpfb.hpp"
#include "guide/graph.hpp"
#include "guide/graph_io.hpp"
#include "guide/models.hpp"
#include "guide/pyramid.hpp"
#include "guide/repair.hpp"
#include "guide/rng.hpp"
#include "guide/text_io.hpp"

namespace guide {

enum class PartitionerKind { Fast, SR, Random };

inline std::string to_string(PartitionerKind k) {
  switch (k) {
    case PartitionerKind::Fast: return "fast";
    case PartitionerKind::SR: return "sr";
    case PartitionerKind::Random: return "random";
  }
  return "?";
}

inline PartitionerKind parse_partitioner(std::string_view s) {
  if (s == "fast") return PartitionerKind::Fast;
  if (s == "sr") return PartitionerKind::SR;
  if (s == "random") return PartitionerKind::Random;
  throw ArgumentError("unknown partitioner '" + std::string(s) + "'");
}

struct EngineConfig {
  int num_shards = 4;
  PartitionerKind partitioner = PartitionerKind::SR;
  GpfbConfig gpfb;
  RepairStrategy strategy = RepairStrategy::MixUp;
  double tau = 1.0;
  ModelKind model = ModelKind::MeanGNN;
  TrainConfig train;
  PyramidConfig pyramid;
  std::uint64_t seed = 0;
  /// Node removals also retrain the shards of the removed node's neighbors.
  bool strict = true;
  /// Worker threads for shard training; 0 picks the hardware concurrency.
  int threads = 1;

  void validate() const {
    if (num_shards < 2) throw ArgumentError("at least 2 shards are required");
    gpfb.validate();
    if (strategy != RepairStrategy::None) validate_tau(tau);
    train.validate();
    if (pyramid.embedding_dim < 1) throw ArgumentError("embedding dimension must be positive");
    if (pyramid.levels < 0 || pyramid.levels > 20) throw ArgumentError("pyramid depth must lie in [0, 20]");
    if (threads < 0) throw ArgumentError("thread count must be nonnegative");
  }
};

inline bool operator==(const EngineConfig& a, const EngineConfig& b) {
  return a.num_shards == b.num_shards && a.partitioner == b.partitioner && a.gpfb.alpha == b.gpfb.alpha &&
         a.gpfb.beta == b.gpfb.beta && a.gpfb.max_outer_iters == b.gpfb.max_outer_iters &&
         a.gpfb.max_inner_iters == b.gpfb.max_inner_iters && a.gpfb.max_y_iters == b.gpfb.max_y_iters &&
         a.gpfb.tol == b.gpfb.tol && a.gpfb.shift_gamma == b.gpfb.shift_gamma &&
         a.gpfb.degree_epsilon == b.gpfb.degree_epsilon && a.gpfb.seed == b.gpfb.seed &&
         a.strategy == b.strategy && a.tau == b.tau && a.model == b.model && a.train == b.train &&
         a.pyramid.embedding_dim == b.pyramid.embedding_dim && a.pyramid.levels == b.pyramid.levels &&
         a.seed == b.seed && a.strict == b.strict;
}

inline std::uint64_t shard_model_seed(std::uint64_t seed, int shard) {
  return derive_seed(seed, {0x6d6f64656cULL, static_cast<std::uint64_t>(shard)});
}

inline std::uint64_t repair_seed(std::uint64_t seed) { return derive_seed(seed, {0x726570616972ULL}); }

struct ShardState {
  RepairedSubgraph subgraph;
  ModelParams model;
  std::optional<double> raw_kernel;

  friend bool operator==(const ShardState& a, const ShardState& b) {
    return a.subgraph == b.subgraph && a.model == b.model && a.raw_kernel == b.raw_kernel;
  }
};

struct AuditEntry {
  std::uint64_t revision = 0;
  std::string kind;
  std::string ids;
  std::vector<int> retrained;
  double seconds = 0.0;
};

struct EnsembleState {
  EngineConfig config;
  LabeledGraph graph;
  Partition partition;
  DegreeRecord degrees;
  std::set<int> removed_nodes;
  std::set<int> removed_features;
  std::set<std::pair<int, int>> removed_edges;
  std::vector<ShardState> shards;
  std::optional<EigenEmbedding> reference;
  std::vector<double> weights;
  std::uint64_t revision = 0;
  std::vector<AuditEntry> audit;

  int num_shards() const { return static_cast<int>(shards.size()); }

  std::vector<double> raw_kernels() const {
    std::vector<double> raw;
    for (const auto& s : shards) raw.push_back(s.raw_kernel.value_or(0.0));
    return raw;
  }

  /// Deep comparison of everything but the audit trail, whose wall times vary.
  friend bool operator==(const EnsembleState& a, const EnsembleState& b) {
    auto same_ref = [&] {
      if (a.reference.has_value() != b.reference.has_value()) return false;
      if (!a.reference) return true;
      const auto& x = a.reference->vectors;
      const auto& y = b.reference->vectors;
      return x.rows() == y.rows() && x.cols() == y.cols() && x == y;
    };
    return a.config == b.config && a.graph == b.graph && a.partition == b.partition && a.degrees == b.degrees &&
           a.removed_nodes == b.removed_nodes && a.removed_features == b.removed_features &&
           a.removed_edges == b.removed_edges && a.shards == b.shards && same_ref() && a.weights == b.weights &&
           a.revision == b.revision;
  }
};

// ---------------------------------------------------------------------------
// Shard work

namespace detail {

template <class Fn>
void for_each_shard(const std::vector<int>& shards, int threads, Fn fn) {
  unsigned workers = threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : static_cast<unsigned>(threads);
  if (workers <= 1 || shards.size() <= 1) {
    for (int j : shards) fn(j);
    return;
  }
  std::vector<std::future<void>> pending;
  std::size_t next = 0;
  while (next < shards.size() || !pending.empty()) {
    while (next < shards.size() && pending.size() < workers)
      pending.push_back(std::async(std::launch::async, fn, shards[next++]));
    pending.front().get();
    pending.erase(pending.begin());
  }
}

inline ModelParams train_fresh(const EngineConfig& cfg, const RepairedSubgraph& rs, int num_classes, int feature_dim) {
  auto p0 = init_params(cfg.model, feature_dim, num_classes, cfg.train, shard_model_seed(cfg.seed, rs.shard_id));
  return train_shard(rs, p0);
}

inline EigenEmbedding shard_embedding(const RepairedSubgraph& rs, const PyramidConfig& pc) {
  return eigen_embedding(rs.local_adjacency(), pc.embedding_dim);
}

inline void renormalize(EnsembleState& st) {
  if (st.reference)
    st.weights = normalize_kernels(st.raw_kernels());
  else
    st.weights.assign(st.shards.size(), 1.0 / static_cast<double>(st.shards.size()));
}

}  // namespace detail

inline Partition run_partitioner(const LabeledGraph& g, const EngineConfig& cfg) {
  GpfbConfig gc = cfg.gpfb;
  switch (cfg.partitioner) {
    case PartitionerKind::Fast: return gpfb_fast(g, cfg.num_shards, gc);
    case PartitionerKind::SR: return gpfb_sr(g, cfg.num_shards, gc);
    case PartitionerKind::Random: return random_partition(g.num_nodes(), cfg.num_shards, gc.seed);
  }
  throw ArgumentError("unknown partitioner");
}

/// Repairs and trains every shard of a fixed partition. `reference`, when given,
/// becomes the similarity reference for the importance weights.
inline EnsembleState train_with_partition(const LabeledGraph& g, const Partition& p, const EngineConfig& cfg,
                                          const LabeledGraph* reference = nullptr) {
  cfg.validate();
  if (p.num_nodes() != g.num_nodes()) throw ArgumentError("partition and graph sizes differ");
  if (p.num_shards() != cfg.num_shards) throw ArgumentError("partition shard count differs from configuration");
  if (p.has_empty_shard()) throw ArgumentError("partition has an empty shard");
  EnsembleState st{cfg, g, p, DegreeRecord::of(g), {}, {}, {}, {}, std::nullopt, {}, 0, {}};
  st.shards.resize(cfg.num_shards);
  std::vector<int> all(cfg.num_shards);
  for (int j = 0; j < cfg.num_shards; ++j) all[j] = j;
  const auto rseed = repair_seed(cfg.seed);
  detail::for_each_shard(all, cfg.threads, [&](int j) {
    auto rs = repair(p, g, st.degrees, j, cfg.strategy, cfg.tau, rseed);
    check_degree_invariant(rs, st.degrees);
    st.shards[j].model = detail::train_fresh(cfg, rs, g.num_classes(), g.feature_dim());
    st.shards[j].subgraph = std::move(rs);
  });
  if (reference) {
    if (reference->feature_dim() != g.feature_dim()) throw ArgumentError("reference feature dimension differs");
    st.reference = eigen_embedding(*reference, cfg.pyramid.embedding_dim);
    auto ht = build_histogram(*st.reference, cfg.pyramid.levels);
    for (auto& s : st.shards)
      s.raw_kernel = pyramid_match(ht, build_histogram(detail::shard_embedding(s.subgraph, cfg.pyramid),
                                                       cfg.pyramid.levels));
  }
  detail::renormalize(st);
  return st;
}

inline EnsembleState train_all(const LabeledGraph& g, const EngineConfig& cfg, const LabeledGraph* reference = nullptr) {
  cfg.validate();
  return train_with_partition(g, run_partitioner(g, cfg), cfg, reference);
}

/// Fills the similarity cache against `reference`. The revision is not bumped: the
/// trained shards are unchanged.
inline void attach_reference(EnsembleState& st, const LabeledGraph& reference) {
  if (reference.feature_dim() != st.graph.feature_dim()) throw ArgumentError("reference feature dimension differs");
  st.reference = eigen_embedding(reference, st.config.pyramid.embedding_dim);
  auto ht = build_histogram(*st.reference, st.config.pyramid.levels);
  for (auto& s : st.shards)
    s.raw_kernel = pyramid_match(ht, build_histogram(detail::shard_embedding(s.subgraph, st.config.pyramid),
                                                     st.config.pyramid.levels));
  detail::renormalize(st);
}

// ---------------------------------------------------------------------------
// Unlearning

enum class RequestKind { Node, Edge, Feature };

inline std::string to_string(RequestKind k) {
  switch (k) {
    case RequestKind::Node: return "node";
    case RequestKind::Edge: return "edge";
    case RequestKind::Feature: return "feature";
  }
  return "?";
}

struct UnlearnRequest {
  RequestKind kind = RequestKind::Node;
  int u = 0;
  int v = -1;  // second endpoint of an edge request

  static UnlearnRequest node(int u) { return {RequestKind::Node, u, -1}; }
  static UnlearnRequest edge(int u, int v) { return {RequestKind::Edge, std::min(u, v), std::max(u, v)}; }
  static UnlearnRequest feature(int u) { return {RequestKind::Feature, u, -1}; }

  std::string ids() const { return kind == RequestKind::Edge ? std::to_string(u) + "-" + std::to_string(v) : std::to_string(u); }
  friend bool operator==(const UnlearnRequest&, const UnlearnRequest&) = default;
};

struct UnlearnResult {
  EnsembleState state;
  std::vector<int> retrained;
  double seconds = 0.0;
};

namespace detail {

inline void check_node_id(const EnsembleState& st, int u) {
  if (u < 0 || u >= st.graph.num_nodes())
    throw RequestError("unknown node id " + std::to_string(u));
  if (st.removed_nodes.contains(u)) throw RequestError("node " + std::to_string(u) + " is already unlearned");
}

inline void validate_request(const EnsembleState& st, const UnlearnRequest& r) {
  switch (r.kind) {
    case RequestKind::Node: check_node_id(st, r.u); break;
    case RequestKind::Feature:
      check_node_id(st, r.u);
      if (st.removed_features.contains(r.u))
        throw RequestError("features of node " + std::to_string(r.u) + " are already unlearned");
      break;
    case RequestKind::Edge:
      check_node_id(st, r.u);
      check_node_id(st, r.v);
      if (st.removed_edges.contains({r.u, r.v}))
        throw RequestError("edge " + r.ids() + " is already unlearned");
      if (!st.graph.has_edge(r.u, r.v)) throw RequestError("unknown edge " + r.ids());
      break;
  }
}

/// Applies the graph and degree-record part of a request; returns the shards whose
/// repaired subgraph must be rebuilt.
inline std::set<int> apply_delta(EnsembleState& st, const UnlearnRequest& r) {
  std::set<int> touched;
  const auto& p = st.partition;
  switch (r.kind) {
    case RequestKind::Node: {
      const int su = p.shard_of(r.u);
      touched.insert(su);
      for (int w : st.graph.neighbors(r.u)) {
        if (!st.config.strict && p.shard_of(w) != su) continue;
        --st.degrees.original_degree[w];
        touched.insert(p.shard_of(w));
      }
      st.degrees.original_degree[r.u] = 0;
      st.graph = st.graph.without_node(r.u);
      st.removed_nodes.insert(r.u);
      break;
    }
    case RequestKind::Edge:
      --st.degrees.original_degree[r.u];
      --st.degrees.original_degree[r.v];
      touched.insert(p.shard_of(r.u));
      touched.insert(p.shard_of(r.v));
      st.graph = st.graph.without_edge(r.u, r.v);
      st.removed_edges.insert({r.u, r.v});
      break;
    case RequestKind::Feature:
      touched.insert(p.shard_of(r.u));
      st.graph = st.graph.with_zeroed_features(r.u);
      st.removed_features.insert(r.u);
      break;
  }
  return touched;
}

inline std::vector<int> retrain_shards(EnsembleState& st, const std::set<int>& touched) {
  std::vector<int> ids(touched.begin(), touched.end());
  std::vector<ShardState> next(ids.size());
  std::vector<int> slot(st.shards.size(), -1);
  for (std::size_t k = 0; k < ids.size(); ++k) slot[ids[k]] = static_cast<int>(k);
  std::optional<PyramidHistogram> ht;
  if (st.reference) ht = build_histogram(*st.reference, st.config.pyramid.levels);
  for_each_shard(ids, st.config.threads, [&](int j) {
    auto& out = next[slot[j]];
    out.subgraph = shrink_after_unlearn(st.shards[j].subgraph, st.removed_nodes, st.degrees, st.graph);
    check_degree_invariant(out.subgraph, st.degrees);
    if (out.subgraph.num_real() == 0)
      throw RequestError("unlearning would leave shard " + std::to_string(j) + " without training nodes");
    out.model = train_fresh(st.config, out.subgraph, st.graph.num_classes(), st.graph.feature_dim());
    if (ht)
      out.raw_kernel = pyramid_match(*ht, build_histogram(shard_embedding(out.subgraph, st.config.pyramid),
                                                          st.config.pyramid.levels));
  });
  for (std::size_t k = 0; k < ids.size(); ++k) st.shards[ids[k]] = std::move(next[k]);
  renormalize(st);
  return ids;
}

}  // namespace detail

/// Requests in a batch may not name the same node twice, in any role.
inline void check_conflicts(const std::vector<UnlearnRequest>& reqs) {
  std::map<int, std::vector<std::string>> uses;
  std::set<std::pair<int, int>> edges;
  std::vector<std::string> problems;
  for (const auto& r : reqs) {
    if (r.kind == RequestKind::Edge) {
      if (!edges.insert({r.u, r.v}).second) problems.push_back("edge " + r.ids() + " requested twice");
      continue;
    }
    uses[r.u].push_back(to_string(r.kind));
  }
  for (const auto& r : reqs)
    if (r.kind == RequestKind::Edge)
      for (int x : {r.u, r.v})
        if (uses.contains(x) && std::find(uses[x].begin(), uses[x].end(), "node") != uses[x].end())
          problems.push_back("edge " + r.ids() + " touches node " + std::to_string(x) + " removed in the same batch");
  for (const auto& [u, kinds] : uses)
    if (kinds.size() > 1) {
      std::string k;
      for (const auto& s : kinds) k += (k.empty() ? "" : ",") + s;
      problems.push_back("node " + std::to_string(u) + " requested " + std::to_string(kinds.size()) + " times (" + k +
                         ")");
    }
  if (!problems.empty()) {
    std::string msg = "conflicting requests:";
    for (const auto& p : problems) msg += " " + p + ";";
    msg.pop_back();
    throw RequestError(msg);
  }
}

/// Applies every delta first, then rebuilds and retrains each touched shard once.
inline UnlearnResult batch_unlearn(const EnsembleState& state, const std::vector<UnlearnRequest>& reqs) {
  if (reqs.empty()) throw RequestError("empty request batch");
  check_conflicts(reqs);
  const auto t0 = std::chrono::steady_clock::now();
  UnlearnResult res{state, {}, 0.0};
  auto& st = res.state;
  std::set<int> touched;
  for (const auto& r : reqs) {
    detail::validate_request(st, r);
    auto t = detail::apply_delta(st, r);
    touched.insert(t.begin(), t.end());
  }
  res.retrained = detail::retrain_shards(st, touched);
  ++st.revision;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::string kinds, ids;
  for (const auto& r : reqs) {
    kinds += (kinds.empty() ? "" : ",") + to_string(r.kind);
    ids += (ids.empty() ? "" : ",") + r.ids();
  }
  st.audit.push_back({st.revision, kinds, ids, res.retrained, res.seconds});
  return res;
}

inline UnlearnResult unlearn(const EnsembleState& state, const UnlearnRequest& req) {
  return batch_unlearn(state, {req});
}

/// Retrains every shard of `st` on a new partition of its current graph. Unlearned
/// nodes keep an assignment but are never a shard's training node.
inline EnsembleState repartition_state(const EnsembleState& st, const EngineConfig& cfg) {
  cfg.validate();
  if (cfg.num_shards < 2) throw ArgumentError("at least 2 shards are required");
  std::vector<int> keep;
  for (int i = 0; i < st.graph.num_nodes(); ++i)
    if (!st.removed_nodes.contains(i)) keep.push_back(i);
  // partition the surviving nodes, then map back to global ids
  auto sub = st.graph.induced(keep);
  auto ps = run_partitioner(sub, cfg);
  std::vector<int> assign(st.graph.num_nodes(), 0);
  for (std::size_t k = 0; k < keep.size(); ++k) assign[keep[k]] = ps.assignment()[k];
  EnsembleState next = st;
  next.config = cfg;
  next.partition = Partition(std::move(assign), cfg.num_shards);
  next.shards.assign(cfg.num_shards, {});
  std::vector<int> all(cfg.num_shards);
  std::iota(all.begin(), all.end(), 0);
  const auto rseed = repair_seed(cfg.seed);
  std::optional<PyramidHistogram> ht;
  if (next.reference) ht = build_histogram(*next.reference, cfg.pyramid.levels);
  detail::for_each_shard(all, cfg.threads, [&](int j) {
    std::vector<int> members;
    for (int i : next.partition.members(j))
      if (!st.removed_nodes.contains(i)) members.push_back(i);
    auto rs = repair_members(members, next.graph, next.degrees, j, cfg.strategy, cfg.tau, rseed);
    check_degree_invariant(rs, next.degrees);
    next.shards[j].model = detail::train_fresh(cfg, rs, next.graph.num_classes(), next.graph.feature_dim());
    if (ht)
      next.shards[j].raw_kernel =
          pyramid_match(*ht, build_histogram(detail::shard_embedding(rs, cfg.pyramid), cfg.pyramid.levels));
    next.shards[j].subgraph = std::move(rs);
  });
  detail::renormalize(next);
  ++next.revision;
  std::vector<int> ids(all);
  next.audit.push_back({next.revision, "repartition", "-", ids, 0.0});
  return next;
}

// ---------------------------------------------------------------------------
// Evaluation

enum class Aggregation { Similarity, Average };

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<double> shard_accuracy;
  std::vector<double> weights;
};

inline std::vector<int> argmax_rows(const Eigen::MatrixXd& probs) {
  std::vector<int> out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index k = 0;
    probs.row(i).maxCoeff(&k);
    out[i] = static_cast<int>(k);
  }
  return out;
}

inline double accuracy(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw ArgumentError("label vectors must be equal and nonempty");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hit += truth[i] == pred[i];
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

/// Mean per-class F1 over classes occurring in either vector.
inline double macro_f1(const std::vector<int>& truth, const std::vector<int>& pred) {
  if (truth.size() != pred.size() || truth.empty()) throw ArgumentError("label vectors must be equal and nonempty");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  double sum = 0.0;
  for (int c : classes) {
    double tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      tp += truth[i] == c && pred[i] == c;
      fp += truth[i] != c && pred[i] == c;
      fn += truth[i] == c && pred[i] != c;
    }
    sum += tp == 0 ? 0.0 : 2 * tp / (2 * tp + fp + fn);
  }
  return sum / static_cast<double>(classes.size());
}

/// Read-only. Similarity weights come from the cached reference when one is
/// attached, otherwise they are computed against `test` without being stored.
inline Metrics evaluate(const EnsembleState& st, const LabeledGraph& test,
                        Aggregation agg = Aggregation::Similarity) {
  if (test.feature_dim() != st.graph.feature_dim())
    throw ArgumentError("test feature dimension " + std::to_string(test.feature_dim()) +
                        " does not match training dimension " + std::to_string(st.graph.feature_dim()));
  for (int y : test.labels())
    if (y >= st.graph.num_classes()) throw ArgumentError("test label outside the trained classes");
  Metrics m;
  if (agg == Aggregation::Average) {
    m.weights.assign(st.shards.size(), 1.0 / static_cast<double>(st.shards.size()));
  } else if (st.reference) {
    m.weights = st.weights;
  } else {
    std::vector<EigenEmbedding> embs;
    for (const auto& s : st.shards) embs.push_back(detail::shard_embedding(s.subgraph, st.config.pyramid));
    m.weights = importance_weights(eigen_embedding(test, st.config.pyramid.embedding_dim), embs,
                                   st.config.pyramid.levels)
                    .weights;
  }
  std::vector<Prediction> preds;
  for (const auto& s : st.shards) {
    preds.push_back(predict(s.model, test));
    m.shard_accuracy.push_back(accuracy(test.labels(), argmax_rows(preds.back().probs)));
  }
  auto pred = argmax_rows(aggregate_predictions(preds, m.weights).probs);
  m.accuracy = accuracy(test.labels(), pred);
  m.macro_f1 = macro_f1(test.labels(), pred);
  return m;
}

// ---------------------------------------------------------------------------
// Persistence

inline constexpr int kStateFormatVersion = 1;

inline std::string crc32_hex(std::string_view data) {
  uLong c = crc32(0L, Z_NULL, 0);
  c = crc32(c, reinterpret_cast<const Bytef*>(data.data()), static_cast<uInt>(data.size()));
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(c));
  return buf;
}

inline nlohmann::json config_to_json(const EngineConfig& c) {
  nlohmann::json j;
  j["num_shards"] = c.num_shards;
  j["partitioner"] = to_string(c.partitioner);
  j["alpha"] = c.gpfb.alpha;
  j["beta"] = c.gpfb.beta;
  j["max_outer_iters"] = c.gpfb.max_outer_iters;
  j["max_inner_iters"] = c.gpfb.max_inner_iters;
  j["max_y_iters"] = c.gpfb.max_y_iters;
  j["tol"] = c.gpfb.tol;
  j["shift_gamma"] = c.gpfb.shift_gamma ? nlohmann::json(*c.gpfb.shift_gamma) : nlohmann::json(nullptr);
  j["degree_epsilon"] = c.gpfb.degree_epsilon;
  j["partition_seed"] = c.gpfb.seed;
  j["strategy"] = to_string(c.strategy);
  j["tau"] = c.tau;
  j["model"] = to_string(c.model);
  j["learning_rate"] = c.train.learning_rate;
  j["epochs"] = c.train.epochs;
  j["weight_decay"] = c.train.weight_decay;
  j["sgc_steps"] = c.train.sgc_steps;
  j["hidden"] = c.train.hidden;
  j["d_emb"] = c.pyramid.embedding_dim;
  j["levels"] = c.pyramid.levels;
  j["seed"] = c.seed;
  j["strict"] = c.strict;
  return j;
}

inline EngineConfig config_from_json(const nlohmann::json& j) {
  EngineConfig c;
  c.num_shards = j.at("num_shards").get<int>();
  c.partitioner = parse_partitioner(j.at("partitioner").get<std::string>());
  c.gpfb.alpha = j.at("alpha").get<double>();
  c.gpfb.beta = j.at("beta").get<double>();
  c.gpfb.max_outer_iters = j.at("max_outer_iters").get<int>();
  c.gpfb.max_inner_iters = j.at("max_inner_iters").get<int>();
  c.gpfb.max_y_iters = j.at("max_y_iters").get<int>();
  c.gpfb.tol = j.at("tol").get<double>();
  if (!j.at("shift_gamma").is_null()) c.gpfb.shift_gamma = j.at("shift_gamma").get<double>();
  c.gpfb.degree_epsilon = j.at("degree_epsilon").get<double>();
  c.gpfb.seed = j.at("partition_seed").get<std::uint64_t>();
  c.strategy = parse_repair_strategy(j.at("strategy").get<std::string>());
  c.tau = j.at("tau").get<double>();
  c.model = parse_model_kind(j.at("model").get<std::string>());
  c.train.learning_rate = j.at("learning_rate").get<double>();
  c.train.epochs = j.at("epochs").get<int>();
  c.train.weight_decay = j.at("weight_decay").get<double>();
  c.train.sgc_steps = j.at("sgc_steps").get<int>();
  c.train.hidden = j.at("hidden").get<int>();
  c.pyramid.embedding_dim = j.at("d_emb").get<int>();
  c.pyramid.levels = j.at("levels").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.strict = j.at("strict").get<bool>();
  return c;
}

inline std::string format_audit(const AuditEntry& e) {
  std::string s = "revision=" + std::to_string(e.revision) + " kind=" + e.kind + " ids=" + e.ids + " retrained=";
  for (std::size_t k = 0; k < e.retrained.size(); ++k) s += (k ? "," : "") + std::to_string(e.retrained[k]);
  return s + " seconds=" + io::format_fixed(e.seconds, 6);
}

namespace detail {

inline std::string format_int_lines(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += std::to_string(i) + ' ' + std::to_string(v[i]) + '\n';
  return out;
}

inline std::string format_removed(const EnsembleState& st) {
  std::string out;
  for (int u : st.removed_nodes) out += "node " + std::to_string(u) + '\n';
  for (int u : st.removed_features) out += "feature " + std::to_string(u) + '\n';
  for (auto [u, v] : st.removed_edges) out += "edge " + std::to_string(u) + ' ' + std::to_string(v) + '\n';
  return out;
}

}  // namespace detail

/// Writes the state directory. Existing shard directories are replaced; the audit log
/// is rewritten from the in-memory trail, which only ever grows.
inline void save_state(const EnsembleState& st, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::map<std::string, std::string> files;
  files["graph/edges.txt"] = format_edges(st.graph);
  files["graph/features.csv"] = format_matrix_csv(st.graph.features());
  files["graph/labels.txt"] = format_labels(st.graph.labels());
  files["partition.txt"] = format_partition(st.partition);
  files["degrees.txt"] = detail::format_int_lines(st.degrees.original_degree);
  files["removed.txt"] = detail::format_removed(st);
  if (st.reference) {
    files["reference.csv"] = format_matrix_csv(st.reference->vectors);
    files["weights.txt"] = format_weights({st.raw_kernels(), st.weights});
  }
  for (int j = 0; j < st.num_shards(); ++j) {
    const std::string sd = "shard_" + std::to_string(j) + "/";
    fs::remove_all(dir / ("shard_" + std::to_string(j)));
    save_repaired(st.shards[j].subgraph, dir / sd);
    for (const char* f : {"edges.txt", "features.csv", "nodes.txt", "mask.txt", "meta.txt"})
      files[sd + f] = io::read_file(dir / (sd + f));
    files[sd + "model.txt"] = format_model(st.shards[j].model);
    if (st.shards[j].raw_kernel) files[sd + "kernel.txt"] = io::format_exact(*st.shards[j].raw_kernel) + '\n';
  }
  for (const char* f : {"reference.csv", "weights.txt"})
    if (!st.reference) fs::remove(dir / f);

  nlohmann::json manifest;
  manifest["format_version"] = kStateFormatVersion;
  manifest["revision"] = st.revision;
  manifest["num_nodes"] = st.graph.num_nodes();
  manifest["num_classes"] = st.graph.num_classes();
  manifest["feature_dim"] = st.graph.feature_dim();
  manifest["config"] = config_to_json(st.config);
  nlohmann::json seeds;
  seeds["global"] = st.config.seed;
  seeds["partition"] = st.config.gpfb.seed;
  seeds["repair"] = repair_seed(st.config.seed);
  for (int j = 0; j < st.num_shards(); ++j) seeds["shards"].push_back(st.shards[j].model.seed);
  manifest["seeds"] = seeds;
  manifest["has_reference"] = st.reference.has_value();
  for (const auto& [name, body] : files) {
    io::write_file(dir / name, body);
    manifest["checksums"][name] = crc32_hex(body);
  }
  io::write_file(dir / "manifest.json", manifest.dump(2) + '\n');
  std::string audit;
  for (const auto& e : st.audit) audit += format_audit(e) + '\n';
  io::write_file(dir / "audit.log", audit);
}

namespace detail {

inline std::optional<AuditEntry> parse_audit_line(std::string_view line) {
  AuditEntry e;
  for (auto tok : io::split_ws(line)) {
    auto eq = tok.find('=');
    if (eq == std::string_view::npos) return std::nullopt;
    auto key = tok.substr(0, eq), val = tok.substr(eq + 1);
    if (key == "revision") io::parse_number(val, e.revision);
    else if (key == "kind") e.kind = val;
    else if (key == "ids") e.ids = val;
    else if (key == "seconds") io::parse_number(val, e.seconds);
    else if (key == "retrained")
      for (auto part : io::split_on(val, ',')) {
        int j = 0;
        if (!part.empty() && io::parse_number(part, j)) e.retrained.push_back(j);
      }
  }
  return e;
}

}  // namespace detail

inline EnsembleState load_state(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::exists(dir / "manifest.json")) throw LoadError(dir.string() + ": no manifest.json");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(dir.string() + "/manifest.json: " + e.what());
  }
  try {
    const int version = manifest.at("format_version").get<int>();
    if (version > kStateFormatVersion)
      throw VersionError("state format version " + std::to_string(version) + " is newer than supported version " +
                         std::to_string(kStateFormatVersion));
    if (version < 1) throw LoadError("invalid state format version " + std::to_string(version));

    std::map<std::string, std::string> files;
    for (const auto& [name, sum] : manifest.at("checksums").items()) {
      if (!fs::exists(dir / name)) throw LoadError("missing state file " + name);
      std::string body = io::read_file(dir / name);
      if (crc32_hex(body) != sum.get<std::string>()) {
        std::string where = name;
        if (name.rfind("shard_", 0) == 0) where = "shard " + name.substr(6, name.find('/') - 6) + " (" + name + ")";
        throw LoadError("checksum mismatch in " + where);
      }
      files[name] = std::move(body);
    }
    auto need = [&](const std::string& name) -> const std::string& {
      auto it = files.find(name);
      if (it == files.end()) throw LoadError("manifest lists no checksum for " + name);
      return it->second;
    };

    EnsembleState st;
    st.config = config_from_json(manifest.at("config"));
    st.revision = manifest.at("revision").get<std::uint64_t>();
    const int n = manifest.at("num_nodes").get<int>();
    const int h = manifest.at("num_classes").get<int>();
    auto x = parse_features(need("graph/features.csv"), "graph/features.csv");
    if (x.rows() != n) throw LoadError("graph/features.csv has " + std::to_string(x.rows()) + " rows, expected " +
                                       std::to_string(n));
    st.graph = LabeledGraph(n, parse_edges(need("graph/edges.txt"), "graph/edges.txt"), std::move(x),
                            parse_labels(need("graph/labels.txt"), "graph/labels.txt"), h);
    st.partition = parse_partition(need("partition.txt"), st.config.num_shards, "partition.txt");
    for (const auto& line : io::split_lines(need("degrees.txt"))) {
      auto tok = io::split_ws(line);
      int i = 0, d = 0;
      if (tok.size() != 2 || !io::parse_number(tok[0], i) || !io::parse_number(tok[1], d) ||
          i != static_cast<int>(st.degrees.original_degree.size()))
        throw LoadError("degrees.txt: malformed line '" + line + "'");
      st.degrees.original_degree.push_back(d);
    }
    for (const auto& line : io::split_lines(need("removed.txt"))) {
      auto tok = io::split_ws(line);
      int u = 0, v = 0;
      if (tok.size() == 2 && tok[0] == "node" && io::parse_number(tok[1], u)) st.removed_nodes.insert(u);
      else if (tok.size() == 2 && tok[0] == "feature" && io::parse_number(tok[1], u)) st.removed_features.insert(u);
      else if (tok.size() == 3 && tok[0] == "edge" && io::parse_number(tok[1], u) && io::parse_number(tok[2], v))
        st.removed_edges.insert({u, v});
      else
        throw LoadError("removed.txt: malformed line '" + line + "'");
    }
    st.shards.resize(st.config.num_shards);
    for (int j = 0; j < st.config.num_shards; ++j) {
      const std::string sd = "shard_" + std::to_string(j) + "/";
      for (const char* f : {"edges.txt", "features.csv", "nodes.txt", "mask.txt", "meta.txt"}) need(sd + f);
      try {
        st.shards[j].subgraph = load_repaired(dir / sd);
        st.shards[j].model = parse_model(need(sd + "model.txt"), sd + "model.txt");
      } catch (const LoadError& e) {
        throw LoadError("shard " + std::to_string(j) + ": " + e.what());
      } catch (const Error& e) {
        throw LoadError("shard " + std::to_string(j) + ": " + e.what());
      }
      if (files.contains(sd + "kernel.txt")) {
        double k = 0.0;
        if (!io::parse_number(io::trim(files[sd + "kernel.txt"]), k)) throw LoadError("shard " + std::to_string(j) + ": bad kernel value");
        st.shards[j].raw_kernel = k;
      }
    }
    if (manifest.at("has_reference").get<bool>()) {
      st.reference = EigenEmbedding{parse_features(need("reference.csv"), "reference.csv")};
      auto w = parse_weights(need("weights.txt"), "weights.txt");
      if (w.raw != st.raw_kernels()) throw LoadError("weights.txt disagrees with the shard kernel values");
    }
    detail::renormalize(st);
    if (fs::exists(dir / "audit.log"))
      for (const auto& line : io::split_lines(io::read_file(dir / "audit.log")))
        if (auto e = detail::parse_audit_line(line)) st.audit.push_back(*e);
    return st;
  } catch (const LoadError&) {
    throw;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError(dir.string() + "/manifest.json: " + e.what());
  } catch (const Error& e) {
    throw LoadError(dir.string() + ": " + e.what());
  }
}

}  // namespace guide
