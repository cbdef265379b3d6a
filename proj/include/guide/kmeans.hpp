#pragma once

#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "guide/errors.hpp"
#include "guide/graph.hpp"

namespace guide {

struct KMeansResult {
  Partition partition;
  Eigen::MatrixXd centroids;
  double inertia = 0.0;
  int iterations = 0;
};

inline double within_cluster_ss(const Eigen::MatrixXd& rows, const std::vector<int>& assignment,
                                int k) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(k, rows.cols());
  std::vector<int> size(k, 0);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    c.row(assignment[i]) += rows.row(i);
    ++size[assignment[i]];
  }
  for (int j = 0; j < k; ++j)
    if (size[j] > 0) c.row(j) /= size[j];
  double ss = 0.0;
  for (Eigen::Index i = 0; i < rows.rows(); ++i) ss += (rows.row(i) - c.row(assignment[i])).squaredNorm();
  return ss;
}

/// Lloyd's algorithm on the rows of `rows`.
///
/// Seeding is deterministic farthest-point: the first center is the row of largest
/// norm, each further center the row farthest from the chosen set. Ties go to the
/// lowest index. A cluster that empties takes the point farthest from its centroid
/// among clusters that can spare one.
inline KMeansResult kmeans_rows(const Eigen::MatrixXd& rows, int k, int max_iters = 300) {
  const Eigen::Index n = rows.rows();
  if (k < 1) throw ArgumentError("cluster count must be positive");
  if (n < k) throw ArgumentError("fewer rows than clusters");

  Eigen::MatrixXd centers(k, rows.cols());
  Eigen::Index first = 0;
  rows.rowwise().squaredNorm().maxCoeff(&first);
  centers.row(0) = rows.row(first);
  Eigen::VectorXd mind = (rows.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    Eigen::Index far = 0;
    mind.maxCoeff(&far);
    centers.row(c) = rows.row(far);
    mind = mind.cwiseMin((rows.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign(n, -1);
  KMeansResult out;
  for (int it = 0; it < max_iters; ++it) {
    out.iterations = it + 1;
    bool changed = false;
    for (Eigen::Index i = 0; i < n; ++i) {
      int best = 0;
      double bestd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double d = (rows.row(i) - centers.row(c)).squaredNorm();
        if (d < bestd) {
          bestd = d;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }

    std::vector<int> size(k, 0);
    for (int a : assign) ++size[a];
    for (int c = 0; c < k; ++c) {
      if (size[c] > 0) continue;
      // steal the worst-fitting point from a cluster with at least two members
      Eigen::MatrixXd cur = Eigen::MatrixXd::Zero(k, rows.cols());
      for (Eigen::Index i = 0; i < n; ++i) cur.row(assign[i]) += rows.row(i);
      for (int j = 0; j < k; ++j)
        if (size[j] > 0) cur.row(j) /= size[j];
      Eigen::Index victim = -1;
      double worst = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (size[assign[i]] < 2) continue;
        double d = (rows.row(i) - cur.row(assign[i])).squaredNorm();
        if (d > worst) {
          worst = d;
          victim = i;
        }
      }
      if (victim < 0) throw SolverError("k-means could not repair an empty cluster");
      --size[assign[victim]];
      assign[victim] = c;
      size[c] = 1;
      changed = true;
    }

    centers.setZero();
    for (Eigen::Index i = 0; i < n; ++i) centers.row(assign[i]) += rows.row(i);
    for (int c = 0; c < k; ++c) centers.row(c) /= size[c];
    if (!changed) break;
  }
  out.centroids = centers;
  out.inertia = within_cluster_ss(rows, assign, k);
  out.partition = Partition(std::move(assign), k);
  return out;
}

}  // namespace guide
