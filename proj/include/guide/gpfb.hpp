#pragma once

// Graph partitioning with fairness and balance guidance.
//
// Both solvers maximize, over H with orthonormal columns,
//
//   f(H) = Tr(H^T (W - D - alpha F F^T) H) + 2 Tr(H^T B),
//
// by generalized power iteration: H <- polar(2 (W - D + gamma I) H - 2 alpha F F^T H + 2 B).
// The fast variant discretizes H with k-means. The rotation variant alternates an
// orthogonal Procrustes step for R, an H step whose linear term also pulls HR toward
// the normalized indicator of Y, and a coordinate-ascent step for Y.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guide/errors.hpp"
#include "guide/graph.hpp"
#include "guide/kmeans.hpp"
#include "guide/linalg.hpp"
#include "guide/rng.hpp"

namespace guide {

struct GpfbConfig {
  double alpha = 0.01;
  double beta = 2.0;
  int max_outer_iters = 30;
  int max_inner_iters = 100;
  int max_y_iters = 50;
  double tol = 1e-6;
  /// Spectral shift added to the quadratic term. Unset means the Gershgorin bound
  /// max_i(2 d_i + alpha |C_label(i)|) + 1e-3, which makes the term PSD.
  std::optional<double> shift_gamma;
  /// Added to every degree in the D^{-1/2} factors of the rotation variant.
  double degree_epsilon = 1.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha >= 0.0)) throw ArgumentError("alpha must be nonnegative");
    if (!(beta >= 0.0)) throw ArgumentError("beta must be nonnegative");
    if (!(tol > 0.0)) throw ArgumentError("tol must be positive");
    if (max_outer_iters < 1 || max_inner_iters < 1 || max_y_iters < 1)
      throw ArgumentError("iteration caps must be at least 1");
    if (shift_gamma && !(*shift_gamma >= 0.0)) throw ArgumentError("shift_gamma must be nonnegative");
    if (!(degree_epsilon >= 0.0)) throw ArgumentError("degree_epsilon must be nonnegative");
  }
};

// ---------------------------------------------------------------------------
// Generalized power iteration

inline double gpi_objective(const SparseMatrix& w_minus_d, const Eigen::MatrixXd& F,
                            const Eigen::MatrixXd& B, double alpha, const Eigen::MatrixXd& H) {
  Eigen::MatrixXd LH = w_minus_d * H;
  Eigen::MatrixXd FtH = F.transpose() * H;
  return (H.cwiseProduct(LH)).sum() - alpha * FtH.squaredNorm() + 2.0 * H.cwiseProduct(B).sum();
}

/// Upper bound on the largest eigenvalue of D - W + alpha F F^T.
inline double gershgorin_shift(const Eigen::VectorXd& degree, const Eigen::MatrixXd& F, double alpha) {
  Eigen::VectorXd class_size_of_row = F * F.colwise().sum().transpose();
  double bound = 0.0;
  for (Eigen::Index i = 0; i < degree.size(); ++i)
    bound = std::max(bound, 2.0 * degree(i) + alpha * class_size_of_row(i));
  return bound + 1e-3;
}

struct GpiResult {
  Eigen::MatrixXd H;
  /// f(H) for the starting point and after every update.
  std::vector<double> objective;
  double gamma = 0.0;
  int iterations = 0;
};

inline GpiResult gpi_solve_H(const Laplacian& lap, const Eigen::MatrixXd& F, const Eigen::MatrixXd& B,
                             double alpha, const Eigen::MatrixXd& H0, const GpfbConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = lap.degree.size();
  if (B.rows() != n || H0.rows() != n || B.cols() != H0.cols())
    throw ArgumentError("gpi_solve_H: B and H0 must both be n x v");
  if (F.rows() != n) throw ArgumentError("gpi_solve_H: F must have n rows");

  GpiResult out;
  out.gamma = cfg.shift_gamma ? *cfg.shift_gamma : gershgorin_shift(lap.degree, F, alpha);
  out.H = H0;
  double f = gpi_objective(lap.w_minus_d, F, B, alpha, out.H);
  out.objective.push_back(f);
  for (int it = 1; it <= cfg.max_inner_iters; ++it) {
    Eigen::MatrixXd P = 2.0 * (lap.w_minus_d * out.H) - 2.0 * alpha * (F * (F.transpose() * out.H)) +
                        2.0 * B + 2.0 * out.gamma * out.H;
    out.H = linalg::polar_factor(P, " at power iteration " + std::to_string(it));
    double fn = gpi_objective(lap.w_minus_d, F, B, alpha, out.H);
    out.objective.push_back(fn);
    out.iterations = it;
    bool done = std::abs(fn - f) <= cfg.tol * std::max(1.0, std::abs(f));
    f = fn;
    if (done) break;
  }
  return out;
}

/// The v algebraically largest eigenvectors of W - D. Dense solve for small graphs,
/// shifted subspace iteration otherwise, a seeded random orthonormal basis if that fails.
inline Eigen::MatrixXd initial_embedding(const Laplacian& lap, const Eigen::MatrixXd& F, int v, std::uint64_t seed,
                                         int dense_limit = 1000) {
  const Eigen::Index n = lap.degree.size();
  if (n < v) throw ArgumentError("fewer nodes than shards");
  // A tiny label term picks a basis inside degenerate eigenspaces of W - D (isolated
  // nodes, several components) without moving well-separated eigenvectors.
  constexpr double kTieBreak = 1e-6;
  if (n <= dense_limit) {
    Eigen::MatrixXd A = Eigen::MatrixXd(lap.w_minus_d) - kTieBreak * F * F.transpose();
    return linalg::dense_top_eigenpairs(A, v).vectors;
  }
  const double shift = 2.0 * (lap.degree.size() ? lap.degree.maxCoeff() : 0.0) + kTieBreak * n;
  try {
    auto op = [&](const Eigen::MatrixXd& X) -> Eigen::MatrixXd {
      return lap.w_minus_d * X - kTieBreak * F * (F.transpose() * X) + shift * X;
    };
    auto pairs = linalg::subspace_iteration(op, n, v, derive_seed(seed, {0x1e1}), 600, 1e-6,
                                            [](double x) { return x; });
    return linalg::orthonormalize(pairs.vectors);
  } catch (const NumericalError&) {
    Rng rng(derive_seed(seed, {0x1e2}));
    return linalg::orthonormalize(gaussian_matrix(n, v, rng));
  }
}

// ---------------------------------------------------------------------------
// Discretization helpers shared by the rotation variant

/// G = D^{-1/2} Y (Y^T D Y)^{-1/2} for the partition Y and diagonal `degree`.
inline Eigen::MatrixXd scaled_indicator(const Partition& p, const Eigen::VectorXd& degree) {
  const int v = p.num_shards();
  std::vector<double> mass(v, 0.0);
  std::vector<int> size(v, 0);
  for (int i = 0; i < p.num_nodes(); ++i) {
    mass[p.shard_of(i)] += degree(i);
    ++size[p.shard_of(i)];
  }
  for (int j = 0; j < v; ++j)
    if (size[j] == 0) throw ArgumentError("shard " + std::to_string(j) + " is empty");
  Eigen::MatrixXd G = Eigen::MatrixXd::Zero(p.num_nodes(), v);
  for (int i = 0; i < p.num_nodes(); ++i) {
    const int j = p.shard_of(i);
    G(i, j) = 1.0 / (std::sqrt(degree(i)) * std::sqrt(mass[j]));
  }
  return G;
}

/// Closed-form orthogonal Procrustes step: R = U V^T where
/// H^T D^{-1/2} Y (Y^T D Y)^{-1/2} = U S V^T.
inline Eigen::MatrixXd update_rotation(const Eigen::MatrixXd& H, const Eigen::VectorXd& degree,
                                       const Partition& Y) {
  if (H.rows() != Y.num_nodes() || H.cols() != Y.num_shards())
    throw ArgumentError("update_rotation: H must be n x v");
  Eigen::MatrixXd T = H.transpose() * scaled_indicator(Y, degree);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(T, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

/// Tr(R^T H^T D^{-1/2} Y (Y^T D Y)^{-1/2}).
inline double indicator_objective(const Eigen::MatrixXd& H, const Eigen::MatrixXd& R,
                                  const Eigen::VectorXd& degree, const Partition& Y) {
  return (H * R).cwiseProduct(scaled_indicator(Y, degree)).sum();
}

struct IndicatorResult {
  Partition partition;
  /// Objective before the first sweep and after every sweep.
  std::vector<double> objective;
  int sweeps = 0;
};

/// Coordinate ascent over rows of Y for max Tr(R^T H^T D^{-1/2} Y (Y^T D Y)^{-1/2}).
///
/// With h = D^{-1/2} H R, a_j the sum of h(i, j) over shard j and b_j its degree mass,
/// the objective is sum_j a_j / sqrt(b_j). c_j below is the exact gain of holding node i
/// in shard j rather than outside it, so moving i to argmax c_j never lowers the
/// objective. Ties favour the current shard, then the lowest index. A move that would
/// empty a shard is vetoed.
inline IndicatorResult update_indicator(const Eigen::MatrixXd& H, const Eigen::MatrixXd& R,
                                        const Eigen::VectorXd& degree, const Partition& Y0,
                                        int max_sweeps) {
  const int n = Y0.num_nodes();
  const int v = Y0.num_shards();
  if (H.rows() != n || H.cols() != v || R.rows() != v || R.cols() != v)
    throw ArgumentError("update_indicator: shape mismatch");
  if (Y0.has_empty_shard()) throw ArgumentError("update_indicator: initial indicator has an empty shard");
  for (Eigen::Index i = 0; i < degree.size(); ++i)
    if (!(degree(i) > 0.0)) throw ArgumentError("update_indicator: degrees must be positive");

  Eigen::MatrixXd Ht = H * R;
  for (int i = 0; i < n; ++i) Ht.row(i) /= std::sqrt(degree(i));

  std::vector<int> assign = Y0.assignment();
  IndicatorResult out;
  out.objective.push_back(indicator_objective(H, R, degree, Y0));
  std::vector<double> a(v), b(v), c(v);
  std::vector<int> size(v);
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    std::fill(a.begin(), a.end(), 0.0);
    std::fill(b.begin(), b.end(), 0.0);
    std::fill(size.begin(), size.end(), 0);
    for (int i = 0; i < n; ++i) {
      a[assign[i]] += Ht(i, assign[i]);
      b[assign[i]] += degree(i);
      ++size[assign[i]];
    }
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      const int cur = assign[i];
      if (size[cur] == 1) continue;  // veto: i is the last member of its shard
      const double di = degree(i);
      for (int j = 0; j < v; ++j) {
        if (j == cur)
          c[j] = a[j] / std::sqrt(b[j]) - (a[j] - Ht(i, j)) / std::sqrt(b[j] - di);
        else
          c[j] = (a[j] + Ht(i, j)) / std::sqrt(b[j] + di) - a[j] / std::sqrt(b[j]);
      }
      int best = cur;
      for (int j = 0; j < v; ++j)
        if (c[j] > c[best]) best = j;
      if (best == cur) continue;
      a[cur] -= Ht(i, cur);
      b[cur] -= di;
      --size[cur];
      a[best] += Ht(i, best);
      b[best] += di;
      ++size[best];
      assign[i] = best;
      changed = true;
    }
    out.sweeps = sweep;
    out.objective.push_back(indicator_objective(H, R, degree, Partition(assign, v)));
    if (!changed) break;
  }
  out.partition = Partition(std::move(assign), v);
  return out;
}

// ---------------------------------------------------------------------------
// Solvers

struct FastResult {
  Partition partition;
  Eigen::MatrixXd H;
  GpiResult gpi;
};

struct SolverInputs {
  Laplacian lap;
  Eigen::MatrixXd F;
  GuidedMatrices guided;
  Eigen::MatrixXd B;
};

inline SolverInputs solver_inputs(const LabeledGraph& g, int v, double alpha) {
  SolverInputs in{laplacian(g), build_label_indicator(g).F, guided_matrices(g, v), {}};
  in.B = alpha * in.F * in.guided.M_tilde;
  return in;
}

inline FastResult gpfb_fast_detailed(const LabeledGraph& g, int v, const GpfbConfig& cfg) {
  cfg.validate();
  if (v < 2) throw ArgumentError("shard count must be at least 2");
  if (g.num_nodes() < v) throw ArgumentError("fewer nodes than shards");
  g.require_all_classes();
  auto in = solver_inputs(g, v, cfg.alpha);
  Eigen::MatrixXd H0 = initial_embedding(in.lap, in.F, v, cfg.seed);
  FastResult out;
  out.gpi = gpi_solve_H(in.lap, in.F, in.B, cfg.alpha, H0, cfg);
  out.H = out.gpi.H;
  auto km = kmeans_rows(out.H, v);
  if (km.partition.has_empty_shard()) throw SolverError("k-means left an empty shard");
  out.partition = std::move(km.partition);
  return out;
}

inline Partition gpfb_fast(const LabeledGraph& g, int v, const GpfbConfig& cfg) {
  return gpfb_fast_detailed(g, v, cfg).partition;
}

struct SrResult {
  Partition partition;
  Eigen::MatrixXd H;
  Eigen::MatrixXd R;
  /// Combined objective at the start and after every outer iteration.
  std::vector<double> objective;
  /// Per outer iteration, the power-iteration trace of the H step.
  std::vector<std::vector<double>> inner_objectives;
  /// Per outer iteration, the indicator objective trace of the Y step.
  std::vector<std::vector<double>> indicator_objectives;
  int outer_iterations = 0;
};

/// Tr(H^T (D - W) H) + alpha ||F^T H - M_tilde||^2 - 2 beta Tr(R^T H^T G(Y)).
/// The last term is the part of beta ||HR - G(Y)||^2 that the three block updates act on.
inline double sr_objective(const SolverInputs& in, const Eigen::VectorXd& dhat, double alpha,
                           double beta, const Eigen::MatrixXd& H, const Eigen::MatrixXd& R,
                           const Partition& Y) {
  double cut = -(H.cwiseProduct(in.lap.w_minus_d * H)).sum();
  double fair = (in.F.transpose() * H - in.guided.M_tilde).squaredNorm();
  double align = indicator_objective(H, R, dhat, Y);
  return cut + alpha * fair - 2.0 * beta * align;
}

inline SrResult gpfb_sr_detailed(const LabeledGraph& g, int v, const GpfbConfig& cfg) {
  cfg.validate();
  auto fast = gpfb_fast_detailed(g, v, cfg);
  auto in = solver_inputs(g, v, cfg.alpha);
  Eigen::VectorXd dhat = in.lap.degree.array() + cfg.degree_epsilon;

  SrResult out;
  Eigen::MatrixXd H = fast.H;
  Partition Y = fast.partition;
  Eigen::MatrixXd R = update_rotation(H, dhat, Y);
  double J = sr_objective(in, dhat, cfg.alpha, cfg.beta, H, R, Y);
  out.objective.push_back(J);
  for (int outer = 1; outer <= cfg.max_outer_iters; ++outer) {
    R = update_rotation(H, dhat, Y);
    Eigen::MatrixXd A = in.B + cfg.beta * scaled_indicator(Y, dhat) * R.transpose();
    auto gpi = gpi_solve_H(in.lap, in.F, A, cfg.alpha, H, cfg);
    H = gpi.H;
    out.inner_objectives.push_back(std::move(gpi.objective));
    auto ind = update_indicator(H, R, dhat, Y, cfg.max_y_iters);
    Y = ind.partition;
    out.indicator_objectives.push_back(std::move(ind.objective));
    double Jn = sr_objective(in, dhat, cfg.alpha, cfg.beta, H, R, Y);
    out.objective.push_back(Jn);
    out.outer_iterations = outer;
    bool done = std::abs(Jn - J) <= cfg.tol * std::max(1.0, std::abs(J));
    J = Jn;
    if (done) break;
  }
  out.partition = std::move(Y);
  out.H = std::move(H);
  out.R = std::move(R);
  return out;
}

inline Partition gpfb_sr(const LabeledGraph& g, int v, const GpfbConfig& cfg) {
  return gpfb_sr_detailed(g, v, cfg).partition;
}

/// Uniform random shard per node, then moves from the largest to the smallest shard
/// until sizes differ by at most one.
inline Partition random_partition(int n, int v, std::uint64_t seed) {
  if (v < 1) throw ArgumentError("shard count must be positive");
  if (n < v) throw ArgumentError("fewer nodes than shards");
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, v - 1);
  std::vector<int> assign(n);
  std::vector<std::vector<int>> members(v);
  for (int i = 0; i < n; ++i) {
    assign[i] = pick(rng);
    members[assign[i]].push_back(i);
  }
  while (true) {
    auto [lo, hi] = std::minmax_element(members.begin(), members.end(),
                                        [](const auto& x, const auto& y) { return x.size() < y.size(); });
    if (hi->size() - lo->size() <= 1) break;
    std::uniform_int_distribution<std::size_t> which(0, hi->size() - 1);
    std::size_t k = which(rng);
    int node = (*hi)[k];
    (*hi)[k] = hi->back();
    hi->pop_back();
    lo->push_back(node);
    assign[node] = static_cast<int>(lo - members.begin());
  }
  return Partition(std::move(assign), v);
}

// ---------------------------------------------------------------------------
// Partition quality

/// -(1/2) sum_i | |V_i| - n/v | / n, in [-1, 0].
inline double balance_score(const Partition& p) {
  const double n = p.num_nodes();
  if (n == 0) return 0.0;
  const double target = n / p.num_shards();
  double s = 0.0;
  for (int size : p.shard_sizes()) s += std::abs(size - target);
  return 0.0 - 0.5 * s / n;  // +0 for a perfect split
}

/// -(1/(2v)) sum_i sum_s | |C_s cap V_i| / |V_i| - |C_s| / n |, in [-1, 0].
inline double fairness_score(const Partition& p, const std::vector<int>& labels, int num_classes) {
  const int v = p.num_shards();
  const int n = p.num_nodes();
  if (static_cast<int>(labels.size()) != n) throw ArgumentError("label count differs from node count");
  std::vector<std::vector<int>> joint(v, std::vector<int>(num_classes, 0));
  std::vector<int> class_size(num_classes, 0);
  for (int i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) throw ArgumentError("label out of range");
    ++joint[p.shard_of(i)][labels[i]];
    ++class_size[labels[i]];
  }
  auto sizes = p.shard_sizes();
  double s = 0.0;
  for (int j = 0; j < v; ++j) {
    if (sizes[j] == 0) throw ArgumentError("fairness score undefined: shard " + std::to_string(j) + " is empty");
    for (int c = 0; c < num_classes; ++c)
      s += std::abs(static_cast<double>(joint[j][c]) / sizes[j] - static_cast<double>(class_size[c]) / n);
  }
  return 0.0 - s / (2.0 * v);
}

/// Tr(H^T (D - W) H) = sum_j cut(V_j) / |V_j| for the normalized indicator H.
inline double ratio_cut(const Partition& p, const LabeledGraph& g) {
  if (p.num_nodes() != g.num_nodes()) throw ArgumentError("partition and graph sizes differ");
  auto sizes = p.shard_sizes();
  for (int j = 0; j < p.num_shards(); ++j)
    if (sizes[j] == 0) throw ArgumentError("ratio cut undefined: shard " + std::to_string(j) + " is empty");
  std::vector<double> cut(p.num_shards(), 0.0);
  for (const auto& e : g.edges()) {
    int a = p.shard_of(e.u), b = p.shard_of(e.v);
    if (a == b) continue;
    cut[a] += e.weight;
    cut[b] += e.weight;
  }
  double s = 0.0;
  for (int j = 0; j < p.num_shards(); ++j) s += cut[j] / sizes[j];
  return s;
}

struct PartitionScores {
  double balance = 0.0;
  double fairness = 0.0;
  double combined = 0.0;
  double ratio_cut = 0.0;
};

inline PartitionScores score_partition(const Partition& p, const LabeledGraph& g) {
  PartitionScores s;
  s.balance = balance_score(p);
  s.fairness = fairness_score(p, g.labels(), g.num_classes());
  s.combined = s.balance + s.fairness;
  s.ratio_cut = ratio_cut(p, g);
  return s;
}

/// "balance=... fairness=... ratio_cut=..." with six decimals.
inline std::string format_scores(const PartitionScores& s) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "balance=%.6f fairness=%.6f ratio_cut=%.6f", s.balance, s.fairness,
                s.ratio_cut);
  return buf;
}

}  // namespace guide
