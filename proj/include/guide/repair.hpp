#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "guide/errors.hpp"
#include "guide/graph.hpp"
#include "guide/graph_io.hpp"
#include "guide/rng.hpp"
#include "guide/text_io.hpp"

namespace guide {

/// How a missing neighbor's features are synthesized. None disables repair and is
/// only meant for ablations.
enum class RepairStrategy { None, Zero, Mirror, MixUp };

inline std::string to_string(RepairStrategy s) {
  switch (s) {
    case RepairStrategy::None: return "none";
    case RepairStrategy::Zero: return "zero";
    case RepairStrategy::Mirror: return "mirror";
    case RepairStrategy::MixUp: return "mixup";
  }
  return "?";
}

inline RepairStrategy parse_repair_strategy(std::string_view s) {
  if (s == "none") return RepairStrategy::None;
  if (s == "zero") return RepairStrategy::Zero;
  if (s == "mirror") return RepairStrategy::Mirror;
  if (s == "mixup") return RepairStrategy::MixUp;
  throw ArgumentError("unknown repair strategy '" + std::string(s) + "'");
}

/// Synthetic neighbor number `ordinal` of real node `owner`.
struct SyntheticNode {
  int owner = 0;
  int ordinal = 0;
  friend bool operator==(const SyntheticNode&, const SyntheticNode&) = default;
  friend auto operator<=>(const SyntheticNode&, const SyntheticNode&) = default;
};

struct LocalEdge {
  int a = 0;
  int b = 0;
  double weight = 1.0;
  friend bool operator==(const LocalEdge&, const LocalEdge&) = default;
};

/// One shard's induced subgraph plus synthetic one-hop neighbors.
///
/// Local ids are canonical: real nodes in increasing global id, then synthetic nodes
/// ordered by (owner, ordinal). Each synthetic node has one edge, to its owner. Only
/// real nodes are in the loss mask; synthetic labels are -1.
struct RepairedSubgraph {
  int shard_id = 0;
  std::vector<int> real_nodes;
  std::vector<SyntheticNode> synthetic;
  Eigen::MatrixXd features;
  std::vector<int> labels;
  /// Real-real edges (a < b, local ids) followed by owner-synthetic edges.
  std::vector<LocalEdge> edges;
  RepairStrategy strategy = RepairStrategy::MixUp;
  double tau = 1.0;
  std::uint64_t seed = 0;

  int num_real() const { return static_cast<int>(real_nodes.size()); }
  int num_local() const { return num_real() + static_cast<int>(synthetic.size()); }
  bool in_loss(int local) const { return local < num_real(); }

  std::vector<bool> loss_mask() const {
    std::vector<bool> m(num_local(), false);
    std::fill(m.begin(), m.begin() + num_real(), true);
    return m;
  }

  int local_index_of(int global) const {
    auto it = std::lower_bound(real_nodes.begin(), real_nodes.end(), global);
    return (it != real_nodes.end() && *it == global) ? static_cast<int>(it - real_nodes.begin()) : -1;
  }

  SparseMatrix local_adjacency() const {
    std::vector<Eigen::Triplet<double, int>> t;
    t.reserve(2 * edges.size());
    for (const auto& e : edges) {
      t.emplace_back(e.a, e.b, e.weight);
      t.emplace_back(e.b, e.a, e.weight);
    }
    SparseMatrix A(num_local(), num_local());
    A.setFromTriplets(t.begin(), t.end());
    A.makeCompressed();
    return A;
  }

  std::vector<int> local_degrees() const {
    std::vector<int> d(num_local(), 0);
    for (const auto& e : edges) {
      ++d[e.a];
      ++d[e.b];
    }
    return d;
  }

  /// The repaired graph as a LabeledGraph; synthetic nodes get label 0 since
  /// LabeledGraph requires valid labels. Those labels are never read for loss.
  LabeledGraph as_graph(int num_classes) const {
    std::vector<Edge> es;
    es.reserve(edges.size());
    for (const auto& e : edges) es.push_back({e.a, e.b, e.weight});
    std::vector<int> y(labels);
    for (auto& l : y)
      if (l < 0) l = 0;
    return LabeledGraph(num_local(), es, features, std::move(y), num_classes);
  }

  friend bool operator==(const RepairedSubgraph& x, const RepairedSubgraph& y) {
    return x.shard_id == y.shard_id && x.real_nodes == y.real_nodes && x.synthetic == y.synthetic &&
           x.features.rows() == y.features.rows() && x.features.cols() == y.features.cols() &&
           x.features == y.features && x.labels == y.labels && x.edges == y.edges &&
           x.strategy == y.strategy && x.tau == y.tau && x.seed == y.seed;
  }
};

/// Feature of a synthetic neighbor of a node with features x: zero, a copy of x, or
/// the interpolation lambda * x + (1 - lambda) * 0 for MixUp.
inline Eigen::RowVectorXd synthetic_feature(RepairStrategy s, const Eigen::RowVectorXd& x, double lambda) {
  switch (s) {
    case RepairStrategy::Mirror: return x;
    case RepairStrategy::MixUp: return lambda * x;
    default: return Eigen::RowVectorXd::Zero(x.size());
  }
}

/// MixUp coefficient for (seed, shard, owner, ordinal), uniform on [0, tau].
inline double mixup_lambda(std::uint64_t seed, int shard, int owner, int ordinal, double tau) {
  Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(shard), static_cast<std::uint64_t>(owner),
                             static_cast<std::uint64_t>(ordinal)}));
  return std::uniform_real_distribution<double>(0.0, tau)(rng);
}

/// Missing-neighbor count of every member of a shard: recorded degree minus
/// neighbors retained inside the shard. `members` must be sorted.
inline std::map<int, int> missing_counts(const std::vector<int>& members, const LabeledGraph& g,
                                         const DegreeRecord& rec) {
  std::map<int, int> out;
  for (int u : members) {
    int retained = 0;
    for (int w : g.neighbors(u))
      if (std::binary_search(members.begin(), members.end(), w)) ++retained;
    int missing = rec.original_degree.at(u) - retained;
    if (missing < 0)
      throw ConsistencyError("node " + std::to_string(u) + " keeps more neighbors than its recorded degree");
    out[u] = missing;
  }
  return out;
}

inline std::map<int, int> missing_counts(const Partition& p, const LabeledGraph& g, const DegreeRecord& rec,
                                         int shard) {
  return missing_counts(p.members(shard), g, rec);
}

inline void validate_tau(double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw ArgumentError("tau must lie in (0, 1]");
}

namespace detail {

inline void set_synthetic_row(RepairedSubgraph& rs, int local, const Eigen::RowVectorXd& owner_x,
                              const SyntheticNode& s) {
  double lambda = rs.strategy == RepairStrategy::MixUp
                      ? mixup_lambda(rs.seed, rs.shard_id, s.owner, s.ordinal, rs.tau)
                      : 0.0;
  rs.features.row(local) = synthetic_feature(rs.strategy, owner_x, lambda);
}

/// Rebuilds features, labels and owner edges from real_nodes, synthetic and the
/// real-real edges already in `rs.edges`.
inline void assemble(RepairedSubgraph& rs, const LabeledGraph& g, std::vector<LocalEdge> real_edges) {
  const int nr = rs.num_real();
  rs.features.resize(rs.num_local(), g.feature_dim());
  rs.labels.assign(rs.num_local(), -1);
  for (int k = 0; k < nr; ++k) {
    rs.features.row(k) = g.features().row(rs.real_nodes[k]);
    rs.labels[k] = g.labels()[rs.real_nodes[k]];
  }
  std::sort(real_edges.begin(), real_edges.end(),
            [](const LocalEdge& x, const LocalEdge& y) { return std::tie(x.a, x.b) < std::tie(y.a, y.b); });
  rs.edges = std::move(real_edges);
  for (std::size_t k = 0; k < rs.synthetic.size(); ++k) {
    const int local = nr + static_cast<int>(k);
    const int owner_local = rs.local_index_of(rs.synthetic[k].owner);
    set_synthetic_row(rs, local, g.features().row(rs.synthetic[k].owner), rs.synthetic[k]);
    rs.edges.push_back({owner_local, local, 1.0});
  }
}

}  // namespace detail

/// Repairs one shard given its sorted member list. Reads only those members'
/// adjacency and features plus the degree record.
inline RepairedSubgraph repair_members(const std::vector<int>& members, const LabeledGraph& g,
                                       const DegreeRecord& rec, int shard, RepairStrategy strategy,
                                       double tau, std::uint64_t seed) {
  validate_tau(tau);
  if (!std::is_sorted(members.begin(), members.end())) throw ArgumentError("shard members must be sorted");
  RepairedSubgraph rs;
  rs.shard_id = shard;
  rs.real_nodes = members;
  rs.strategy = strategy;
  rs.tau = tau;
  rs.seed = seed;
  if (strategy != RepairStrategy::None) {
    for (auto [u, c] : missing_counts(members, g, rec))
      for (int k = 0; k < c; ++k) rs.synthetic.push_back({u, k});
  }
  std::vector<LocalEdge> real_edges;
  for (int k = 0; k < rs.num_real(); ++k) {
    int u = members[k];
    auto nb = g.neighbors(u);
    auto wt = g.neighbor_weights(u);
    for (std::size_t t = 0; t < nb.size(); ++t) {
      if (nb[t] <= u) continue;
      int l = rs.local_index_of(nb[t]);
      if (l >= 0) real_edges.push_back({k, l, wt[t]});
    }
  }
  detail::assemble(rs, g, std::move(real_edges));
  return rs;
}

inline RepairedSubgraph repair(const Partition& p, const LabeledGraph& g, const DegreeRecord& rec, int shard,
                               RepairStrategy strategy, double tau, std::uint64_t seed) {
  if (shard < 0 || shard >= p.num_shards()) throw ArgumentError("shard index out of range");
  return repair_members(p.members(shard), g, rec, shard, strategy, tau, seed);
}

/// Throws ConsistencyError unless every real node's local degree equals its record.
inline void check_degree_invariant(const RepairedSubgraph& rs, const DegreeRecord& rec) {
  if (rs.strategy == RepairStrategy::None) return;
  auto d = rs.local_degrees();
  for (int k = 0; k < rs.num_real(); ++k)
    if (d[k] != rec.original_degree.at(rs.real_nodes[k]))
      throw ConsistencyError("shard " + std::to_string(rs.shard_id) + ": node " +
                             std::to_string(rs.real_nodes[k]) + " has local degree " + std::to_string(d[k]) +
                             ", record says " + std::to_string(rec.original_degree.at(rs.real_nodes[k])));
}

/// Updates a repaired shard after removals from the full graph.
///
/// Removed real nodes, their synthetic neighbors and every real edge absent from
/// `g_after` are deleted. A remaining node whose recorded degree dropped loses the
/// same number of synthetic neighbors, highest ordinal first.
inline RepairedSubgraph shrink_after_unlearn(const RepairedSubgraph& rs, const std::set<int>& removed,
                                             const DegreeRecord& new_rec, const LabeledGraph& g_after) {
  RepairedSubgraph out;
  out.shard_id = rs.shard_id;
  out.strategy = rs.strategy;
  out.tau = rs.tau;
  out.seed = rs.seed;
  for (int u : rs.real_nodes)
    if (!removed.contains(u)) out.real_nodes.push_back(u);

  std::vector<LocalEdge> real_edges;
  std::vector<int> retained(out.num_real(), 0);
  for (const auto& e : rs.edges) {
    if (e.a >= rs.num_real() || e.b >= rs.num_real()) continue;
    int gu = rs.real_nodes[e.a], gv = rs.real_nodes[e.b];
    if (removed.contains(gu) || removed.contains(gv) || !g_after.has_edge(gu, gv)) continue;
    int a = out.local_index_of(gu), b = out.local_index_of(gv);
    real_edges.push_back({std::min(a, b), std::max(a, b), e.weight});
    ++retained[a];
    ++retained[b];
  }

  std::map<int, int> have;
  for (const auto& s : rs.synthetic)
    if (!removed.contains(s.owner)) ++have[s.owner];
  for (int k = 0; k < out.num_real(); ++k) {
    int u = out.real_nodes[k];
    int want = rs.strategy == RepairStrategy::None ? 0 : new_rec.original_degree.at(u) - retained[k];
    int cur = have.contains(u) ? have[u] : 0;
    if (want < 0 || want > cur)
      throw ConsistencyError("shard " + std::to_string(rs.shard_id) + ": node " + std::to_string(u) +
                             " needs " + std::to_string(want) + " synthetic neighbors but has " +
                             std::to_string(cur));
    for (int t = 0; t < want; ++t) out.synthetic.push_back({u, t});
  }
  // ordinals are dense 0..c-1 per owner, so keeping the first `want` drops the most recent
  detail::assemble(out, g_after, std::move(real_edges));
  return out;
}

/// Recomputes the feature rows tied to `owner` (its own and its synthetic neighbors')
/// from `g_after`. Used after a feature is unlearned.
inline RepairedSubgraph refresh_owner_features(const RepairedSubgraph& rs, int owner, const LabeledGraph& g_after) {
  RepairedSubgraph out = rs;
  int l = rs.local_index_of(owner);
  if (l < 0) return out;
  out.features.row(l) = g_after.features().row(owner);
  for (std::size_t k = 0; k < rs.synthetic.size(); ++k)
    if (rs.synthetic[k].owner == owner)
      detail::set_synthetic_row(out, rs.num_real() + static_cast<int>(k), g_after.features().row(owner),
                                rs.synthetic[k]);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization: edges.txt (local ids), features.csv, nodes.txt, mask.txt, meta.txt

inline void save_repaired(const RepairedSubgraph& rs, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::string edges;
  for (const auto& e : rs.edges) {
    edges += std::to_string(e.a) + ' ' + std::to_string(e.b);
    if (e.weight != 1.0) edges += ' ' + io::format_exact(e.weight);
    edges += '\n';
  }
  io::write_file(dir / "edges.txt", edges);
  io::write_file(dir / "features.csv", format_matrix_csv(rs.features));
  std::string nodes, mask;
  for (int k = 0; k < rs.num_real(); ++k) {
    nodes += std::to_string(k) + " real " + std::to_string(rs.real_nodes[k]) + ' ' +
             std::to_string(rs.labels[k]) + '\n';
    mask += "1\n";
  }
  for (std::size_t k = 0; k < rs.synthetic.size(); ++k) {
    nodes += std::to_string(rs.num_real() + static_cast<int>(k)) + " synthetic " +
             std::to_string(rs.synthetic[k].owner) + ' ' + std::to_string(rs.synthetic[k].ordinal) + '\n';
    mask += "0\n";
  }
  io::write_file(dir / "nodes.txt", nodes);
  io::write_file(dir / "mask.txt", mask);
  io::write_file(dir / "meta.txt", "shard " + std::to_string(rs.shard_id) + "\nstrategy " + to_string(rs.strategy) +
                                       "\ntau " + io::format_exact(rs.tau) + "\nseed " + std::to_string(rs.seed) +
                                       '\n');
}

inline RepairedSubgraph load_repaired(const std::filesystem::path& dir) {
  RepairedSubgraph rs;
  const std::string src = dir.string();
  for (const auto& line : io::split_lines(io::read_file(dir / "meta.txt"))) {
    auto tok = io::split_ws(line);
    if (tok.size() != 2) continue;
    bool ok = true;
    if (tok[0] == "shard") ok = io::parse_number(tok[1], rs.shard_id);
    else if (tok[0] == "strategy") rs.strategy = parse_repair_strategy(tok[1]);
    else if (tok[0] == "tau") ok = io::parse_number(tok[1], rs.tau);
    else if (tok[0] == "seed") ok = io::parse_number(tok[1], rs.seed);
    if (!ok) throw LoadError(src + "/meta.txt: bad value for " + std::string(tok[0]));
  }
  auto node_lines = io::split_lines(io::read_file(dir / "nodes.txt"));
  for (std::size_t k = 0; k < node_lines.size(); ++k) {
    auto tok = io::split_ws(node_lines[k]);
    int local = 0, a = 0, b = 0;
    if (tok.size() != 4 || !io::parse_number(tok[0], local) || !io::parse_number(tok[2], a) ||
        !io::parse_number(tok[3], b) || local != static_cast<int>(k))
      throw ParseError(src + "/nodes.txt", k + 1, "malformed node manifest line");
    if (tok[1] == "real") {
      rs.real_nodes.push_back(a);
      rs.labels.push_back(b);
    } else if (tok[1] == "synthetic") {
      rs.synthetic.push_back({a, b});
    } else {
      throw ParseError(src + "/nodes.txt", k + 1, "unknown node kind");
    }
  }
  rs.labels.resize(rs.num_local(), -1);
  auto es = parse_edges(io::read_file(dir / "edges.txt"), src + "/edges.txt");
  for (const auto& e : es) rs.edges.push_back({e.u, e.v, e.weight});
  rs.features = parse_features(io::read_file(dir / "features.csv"), src + "/features.csv");
  if (rs.features.rows() != rs.num_local()) throw LoadError(src + ": feature rows do not match node manifest");
  return rs;
}

}  // namespace guide
