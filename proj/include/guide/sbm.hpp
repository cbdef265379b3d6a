#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "guide/graph.hpp"
#include "guide/rng.hpp"

namespace guide {

struct SbmParams {
  int num_nodes = 200;
  int num_blocks = 2;
  int num_classes = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  int feature_dim = 16;
  /// In [0, 1]. Scales the class-mean feature signal.
  double homophily = 0.5;
  /// In [0, 1]. Biases edges toward same-label endpoints; 0 leaves labels out of the
  /// edge model.
  double edge_homophily = 0.0;
  /// Euclidean norm of each class-mean vector before homophily scaling.
  double class_separation = 1.0;
  std::uint64_t seed = 0;
};

/// Planted-partition graph with equal-size blocks and exactly balanced labels.
///
/// Block k holds a contiguous share of slots and every block carries each class at
/// rate 1/h; a seeded permutation maps slots to node ids. Edge (i, j) appears with
/// probability p * f where p is p_in or p_out by block and
/// f = (1 - eta) + eta * h for same-label pairs, (1 - eta) otherwise, clamped to 1, with
/// eta = edge_homophily.
/// The factor averages to 1 over label pairs so expected degrees do not depend on eta.
inline LabeledGraph generate_sbm(const SbmParams& p) {
  if (p.num_nodes < 1 || p.num_blocks < 1 || p.num_classes < 1 || p.feature_dim < 1)
    throw ArgumentError("SBM sizes must be positive");
  if (!(p.p_out >= 0.0 && p.p_out <= p.p_in && p.p_in <= 1.0))
    throw ArgumentError("SBM probabilities must satisfy 0 <= p_out <= p_in <= 1");
  if (!(p.homophily >= 0.0 && p.homophily <= 1.0))
    throw ArgumentError("homophily must lie in [0, 1]");
  if (!(p.edge_homophily >= 0.0 && p.edge_homophily <= 1.0))
    throw ArgumentError("edge homophily must lie in [0, 1]");
  if (p.num_nodes % p.num_classes != 0)
    throw ArgumentError("node count must be divisible by the class count");
  if (p.num_blocks > p.num_nodes) throw ArgumentError("more blocks than nodes");

  const int n = p.num_nodes;
  const int h = p.num_classes;
  Rng rng(p.seed);

  // slot k lies in block k * blocks / n and carries label k mod h
  std::vector<int> slot_block(n), slot_label(n);
  for (int k = 0; k < n; ++k) {
    slot_block[k] = static_cast<int>(static_cast<long long>(k) * p.num_blocks / n);
    slot_label[k] = k % h;
  }
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> block(n), labels(n);
  for (int k = 0; k < n; ++k) {
    block[perm[k]] = slot_block[k];
    labels[perm[k]] = slot_label[k];
  }

  const double same = (1.0 - p.edge_homophily) + p.edge_homophily * h;
  const double diff = 1.0 - p.edge_homophily;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<Edge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double prob = block[i] == block[j] ? p.p_in : p.p_out;
      prob = std::min(1.0, prob * (labels[i] == labels[j] ? same : diff));
      if (unif(rng) < prob) edges.push_back({i, j, 1.0});
    }
  }

  Eigen::MatrixXd means = gaussian_matrix(h, p.feature_dim, rng);
  for (int s = 0; s < h; ++s) {
    double norm = means.row(s).norm();
    if (norm > 0) means.row(s) *= p.class_separation / norm;
  }
  Eigen::MatrixXd x = gaussian_matrix(n, p.feature_dim, rng);
  for (int i = 0; i < n; ++i) x.row(i) += p.homophily * means.row(labels[i]);

  LabeledGraph g(n, edges, std::move(x), std::move(labels), h);
  return g;
}

/// Stratified split into disjoint training and test graphs (induced subgraphs,
/// renumbered). Edges between the two sides are dropped, as in the inductive setting.
struct InductiveSplit {
  LabeledGraph train;
  LabeledGraph test;
  std::vector<int> train_ids;
  std::vector<int> test_ids;
};

inline InductiveSplit split_inductive(const LabeledGraph& g, double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw ArgumentError("test fraction must lie in (0, 1)");
  Rng rng(seed);
  std::vector<std::vector<int>> by_class(g.num_classes());
  for (int i = 0; i < g.num_nodes(); ++i) by_class[g.labels()[i]].push_back(i);
  InductiveSplit out;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    auto k = static_cast<std::size_t>(std::lround(test_fraction * members.size()));
    k = std::min(k, members.size() > 0 ? members.size() - 1 : 0);
    out.test_ids.insert(out.test_ids.end(), members.begin(), members.begin() + k);
    out.train_ids.insert(out.train_ids.end(), members.begin() + k, members.end());
  }
  std::sort(out.train_ids.begin(), out.train_ids.end());
  std::sort(out.test_ids.begin(), out.test_ids.end());
  out.train = g.induced(out.train_ids);
  out.test = g.induced(out.test_ids);
  return out;
}

}  // namespace guide
