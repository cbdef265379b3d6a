#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "guide/errors.hpp"

namespace guide {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor, int>;

/// Dense views of the adjacency are only materialized below this node count.
inline constexpr int kDenseThreshold = 5000;

struct Edge {
  int u = 0;
  int v = 0;
  double weight = 1.0;
};

/// Undirected weighted graph with node features and class labels.
///
/// The adjacency is stored as a symmetric compressed row matrix with an empty
/// diagonal. Instances are immutable; the mutating helpers used by unlearning
/// return new graphs.
class LabeledGraph {
 public:
  LabeledGraph() = default;

  /// Builds and validates a graph. Edges are symmetrized, self-loops dropped and
  /// duplicates collapsed (the first occurrence keeps its weight).
  LabeledGraph(int num_nodes, const std::vector<Edge>& edges, Eigen::MatrixXd features,
               std::vector<int> labels, int num_classes)
      : n_(num_nodes), h_(num_classes), features_(std::move(features)), labels_(std::move(labels)) {
    if (n_ < 0) throw ValidationError("node count must be nonnegative");
    if (h_ < 1) throw ValidationError("class count must be at least 1");
    if (features_.rows() != n_)
      throw ValidationError("feature matrix has " + std::to_string(features_.rows()) +
                            " rows, expected " + std::to_string(n_));
    if (static_cast<int>(labels_.size()) != n_)
      throw ValidationError("label vector has " + std::to_string(labels_.size()) +
                            " entries, expected " + std::to_string(n_));
    for (int i = 0; i < n_; ++i)
      if (labels_[i] < 0 || labels_[i] >= h_)
        throw ValidationError("label " + std::to_string(labels_[i]) + " of node " +
                              std::to_string(i) + " outside [0, " + std::to_string(h_) + ")");
    if (!features_.allFinite()) throw ValidationError("feature matrix contains non-finite values");

    std::vector<Eigen::Triplet<double, int>> triplets;
    triplets.reserve(2 * edges.size());
    for (const auto& e : edges) {
      if (e.u < 0 || e.u >= n_ || e.v < 0 || e.v >= n_)
        throw ValidationError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                              ") references a node outside [0, " + std::to_string(n_) + ")");
      if (!(e.weight > 0.0) || !std::isfinite(e.weight))
        throw ValidationError("edge (" + std::to_string(e.u) + ", " + std::to_string(e.v) +
                              ") has a non-positive weight");
      if (e.u == e.v) continue;
      triplets.emplace_back(e.u, e.v, e.weight);
      triplets.emplace_back(e.v, e.u, e.weight);
    }
    adjacency_.resize(n_, n_);
    // keep the first weight seen for a duplicated pair
    adjacency_.setFromTriplets(triplets.begin(), triplets.end(),
                               [](const double& first, const double&) { return first; });
    adjacency_.makeCompressed();
  }

  int num_nodes() const noexcept { return n_; }
  int num_classes() const noexcept { return h_; }
  int feature_dim() const noexcept { return static_cast<int>(features_.cols()); }
  const SparseMatrix& adjacency() const noexcept { return adjacency_; }
  const Eigen::MatrixXd& features() const noexcept { return features_; }
  const std::vector<int>& labels() const noexcept { return labels_; }

  std::span<const int> neighbors(int i) const {
    const int* begin = adjacency_.innerIndexPtr() + adjacency_.outerIndexPtr()[i];
    const int* end = adjacency_.innerIndexPtr() + adjacency_.outerIndexPtr()[i + 1];
    return {begin, end};
  }

  std::span<const double> neighbor_weights(int i) const {
    const double* begin = adjacency_.valuePtr() + adjacency_.outerIndexPtr()[i];
    const double* end = adjacency_.valuePtr() + adjacency_.outerIndexPtr()[i + 1];
    return {begin, end};
  }

  /// Unweighted degree: number of distinct neighbors.
  int degree(int i) const { return static_cast<int>(neighbors(i).size()); }

  double weighted_degree(int i) const {
    double s = 0.0;
    for (double w : neighbor_weights(i)) s += w;
    return s;
  }

  bool has_edge(int u, int v) const {
    auto nb = neighbors(u);
    return std::binary_search(nb.begin(), nb.end(), v);
  }

  std::size_t num_edges() const { return static_cast<std::size_t>(adjacency_.nonZeros()) / 2; }

  /// Each undirected edge once, with u < v, in row-major order.
  std::vector<Edge> edges() const {
    std::vector<Edge> out;
    out.reserve(num_edges());
    for (int u = 0; u < n_; ++u) {
      auto nb = neighbors(u);
      auto wt = neighbor_weights(u);
      for (std::size_t k = 0; k < nb.size(); ++k)
        if (nb[k] > u) out.push_back({u, nb[k], wt[k]});
    }
    return out;
  }

  std::vector<int> class_counts() const {
    std::vector<int> counts(h_, 0);
    for (int l : labels_) ++counts[l];
    return counts;
  }

  /// Training graphs must contain every class at least once.
  void require_all_classes() const {
    auto counts = class_counts();
    for (int s = 0; s < h_; ++s)
      if (counts[s] == 0) throw ValidationError("class " + std::to_string(s) + " has no nodes");
  }

  Eigen::MatrixXd dense_adjacency(int threshold = kDenseThreshold) const {
    if (n_ > threshold)
      throw ArgumentError("dense adjacency requested for " + std::to_string(n_) +
                          " nodes, above the threshold " + std::to_string(threshold));
    return Eigen::MatrixXd(adjacency_);
  }

  /// Removes every edge incident to u and zeroes its features. Node ids are kept stable.
  LabeledGraph without_node(int u) const {
    check_node(u);
    auto es = edges();
    std::erase_if(es, [u](const Edge& e) { return e.u == u || e.v == u; });
    Eigen::MatrixXd x = features_;
    x.row(u).setZero();
    return rebuild(es, std::move(x));
  }

  LabeledGraph without_edge(int u, int v) const {
    check_node(u);
    check_node(v);
    auto es = edges();
    std::erase_if(es, [&](const Edge& e) {
      return (e.u == u && e.v == v) || (e.u == v && e.v == u);
    });
    return rebuild(es, features_);
  }

  LabeledGraph with_zeroed_features(int u) const {
    check_node(u);
    Eigen::MatrixXd x = features_;
    x.row(u).setZero();
    return rebuild(edges(), std::move(x));
  }

  /// Induced subgraph on `nodes`, relabelled 0..k-1 in the given order.
  LabeledGraph induced(std::span<const int> nodes) const {
    std::vector<int> local(n_, -1);
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      check_node(nodes[k]);
      local[nodes[k]] = static_cast<int>(k);
    }
    std::vector<Edge> es;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(nodes.size()), features_.cols());
    std::vector<int> y(nodes.size());
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      int g = nodes[k];
      x.row(static_cast<Eigen::Index>(k)) = features_.row(g);
      y[k] = labels_[g];
      auto nb = neighbors(g);
      auto wt = neighbor_weights(g);
      for (std::size_t t = 0; t < nb.size(); ++t)
        if (local[nb[t]] > static_cast<int>(k)) es.push_back({static_cast<int>(k), local[nb[t]], wt[t]});
    }
    return LabeledGraph(static_cast<int>(nodes.size()), es, std::move(x), std::move(y), h_);
  }

  friend bool operator==(const LabeledGraph& a, const LabeledGraph& b) {
    if (a.n_ != b.n_ || a.h_ != b.h_ || a.labels_ != b.labels_) return false;
    if (a.features_.rows() != b.features_.rows() || a.features_.cols() != b.features_.cols())
      return false;
    if (a.features_ != b.features_) return false;
    if (a.adjacency_.nonZeros() != b.adjacency_.nonZeros()) return false;
    return std::equal(a.adjacency_.outerIndexPtr(), a.adjacency_.outerIndexPtr() + a.n_ + 1,
                      b.adjacency_.outerIndexPtr()) &&
           std::equal(a.adjacency_.innerIndexPtr(),
                      a.adjacency_.innerIndexPtr() + a.adjacency_.nonZeros(),
                      b.adjacency_.innerIndexPtr()) &&
           std::equal(a.adjacency_.valuePtr(), a.adjacency_.valuePtr() + a.adjacency_.nonZeros(),
                      b.adjacency_.valuePtr());
  }

 private:
  void check_node(int u) const {
    if (u < 0 || u >= n_)
      throw ArgumentError("node " + std::to_string(u) + " outside [0, " + std::to_string(n_) + ")");
  }

  LabeledGraph rebuild(const std::vector<Edge>& es, Eigen::MatrixXd x) const {
    return LabeledGraph(n_, es, std::move(x), labels_, h_);
  }

  int n_ = 0;
  int h_ = 1;
  SparseMatrix adjacency_;
  Eigen::MatrixXd features_;
  std::vector<int> labels_;
};

/// Unweighted degrees of the full training graph, captured before partitioning.
struct DegreeRecord {
  std::vector<int> original_degree;

  static DegreeRecord of(const LabeledGraph& g) {
    DegreeRecord rec;
    rec.original_degree.resize(g.num_nodes());
    for (int i = 0; i < g.num_nodes(); ++i) rec.original_degree[i] = g.degree(i);
    return rec;
  }

  friend bool operator==(const DegreeRecord&, const DegreeRecord&) = default;
};

/// Binary n x h matrix with F(i, s) = 1 iff node i has label s.
struct LabelIndicator {
  Eigen::MatrixXd F;
};

inline LabelIndicator build_label_indicator(const LabeledGraph& g) {
  LabelIndicator ind{Eigen::MatrixXd::Zero(g.num_nodes(), g.num_classes())};
  for (int i = 0; i < g.num_nodes(); ++i) ind.F(i, g.labels()[i]) = 1.0;
  return ind;
}

/// Targets for F^T Y (M) and F^T H (M_tilde) under a fair and balanced partition.
struct GuidedMatrices {
  Eigen::MatrixXd M;
  Eigen::MatrixXd M_tilde;
  int num_shards = 0;
};

inline GuidedMatrices guided_matrices(const LabeledGraph& g, int num_shards) {
  if (num_shards < 2) throw ArgumentError("shard count must be at least 2");
  const auto counts = g.class_counts();
  const double n = g.num_nodes();
  const double v = num_shards;
  GuidedMatrices gm;
  gm.num_shards = num_shards;
  gm.M.resize(g.num_classes(), num_shards);
  gm.M_tilde.resize(g.num_classes(), num_shards);
  for (int s = 0; s < g.num_classes(); ++s) {
    gm.M.row(s).setConstant(counts[s] / v);
    gm.M_tilde.row(s).setConstant(counts[s] / std::sqrt(n * v));
  }
  return gm;
}

/// Shard assignment of every node. Shards are numbered 0..v-1.
class Partition {
 public:
  Partition() = default;
  Partition(std::vector<int> assignment, int num_shards)
      : assignment_(std::move(assignment)), v_(num_shards) {
    if (v_ < 1) throw ArgumentError("shard count must be at least 1");
    for (std::size_t i = 0; i < assignment_.size(); ++i)
      if (assignment_[i] < 0 || assignment_[i] >= v_)
        throw ValidationError("node " + std::to_string(i) + " assigned to shard " +
                              std::to_string(assignment_[i]) + " outside [0, " +
                              std::to_string(v_) + ")");
  }

  int num_nodes() const noexcept { return static_cast<int>(assignment_.size()); }
  int num_shards() const noexcept { return v_; }
  const std::vector<int>& assignment() const noexcept { return assignment_; }
  int shard_of(int node) const { return assignment_.at(node); }

  std::vector<int> shard_sizes() const {
    std::vector<int> sizes(v_, 0);
    for (int a : assignment_) ++sizes[a];
    return sizes;
  }

  bool has_empty_shard() const {
    auto sizes = shard_sizes();
    return std::find(sizes.begin(), sizes.end(), 0) != sizes.end();
  }

  /// Node ids of shard j in increasing order.
  std::vector<int> members(int shard) const {
    std::vector<int> out;
    for (int i = 0; i < num_nodes(); ++i)
      if (assignment_[i] == shard) out.push_back(i);
    return out;
  }

  /// Binary indicator Y (n x v).
  Eigen::MatrixXd indicator() const {
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(num_nodes(), v_);
    for (int i = 0; i < num_nodes(); ++i) Y(i, assignment_[i]) = 1.0;
    return Y;
  }

  /// Column-normalized indicator H with H(i, j) = 1/sqrt(|V_j|) for i in V_j.
  Eigen::MatrixXd normalized_indicator() const {
    auto sizes = shard_sizes();
    for (int j = 0; j < v_; ++j)
      if (sizes[j] == 0)
        throw ArgumentError("shard " + std::to_string(j) + " is empty; H is undefined");
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(num_nodes(), v_);
    for (int i = 0; i < num_nodes(); ++i)
      H(i, assignment_[i]) = 1.0 / std::sqrt(static_cast<double>(sizes[assignment_[i]]));
    return H;
  }

  friend bool operator==(const Partition&, const Partition&) = default;

 private:
  std::vector<int> assignment_;
  int v_ = 0;
};

/// Degree diagonal and the Laplacian in the W - D sign convention used by the solvers.
struct Laplacian {
  Eigen::VectorXd degree;
  SparseMatrix w_minus_d;
};

inline Laplacian laplacian(const LabeledGraph& g) {
  Laplacian lap;
  const int n = g.num_nodes();
  lap.degree.resize(n);
  for (int i = 0; i < n; ++i) lap.degree[i] = g.weighted_degree(i);
  SparseMatrix diag(n, n);
  diag.reserve(Eigen::VectorXi::Constant(n, 1));
  for (int i = 0; i < n; ++i) diag.insert(i, i) = lap.degree[i];
  lap.w_minus_d = g.adjacency() - diag;
  lap.w_minus_d.makeCompressed();
  return lap;
}

}  // namespace guide
