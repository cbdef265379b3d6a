#pragma once

// Pyramid match kernel between unlabeled graphs.
//
// Each graph becomes a point set: node i maps to the absolute values of its entries in
// the eigenvectors of the d_emb dominant (largest |lambda|) adjacency eigenvalues.
// Level l of the pyramid cuts every dimension of [0, 1] into 2^l half-open bins, the
// last one closed. I(l) counts matches (histogram intersection) at level l, and
//
//   k = I(L) + sum_{l < L} 2^{-(L - l)} (I(l) - I(l + 1)).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "guide/errors.hpp"
#include "guide/graph.hpp"
#include "guide/linalg.hpp"
#include "guide/text_io.hpp"

namespace guide {

struct PyramidConfig {
  int embedding_dim = 6;
  int levels = 4;
};

struct EigenEmbedding {
  Eigen::MatrixXd vectors;  // n x d_emb, entries in [0, 1]
  int dim() const { return static_cast<int>(vectors.cols()); }
  int num_points() const { return static_cast<int>(vectors.rows()); }
};

/// Embeds the nodes of a graph with the given symmetric adjacency. Columns whose
/// eigenvalue is numerically zero, and columns beyond n, are zero.
inline EigenEmbedding eigen_embedding(const SparseMatrix& adjacency, int d_emb, int dense_limit = 800) {
  if (d_emb < 1) throw ArgumentError("embedding dimension must be positive");
  const Eigen::Index n = adjacency.rows();
  EigenEmbedding emb{Eigen::MatrixXd::Zero(n, d_emb)};
  if (n == 0 || adjacency.nonZeros() == 0) return emb;
  const int take = static_cast<int>(std::min<Eigen::Index>(n, d_emb));

  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;
  if (n <= dense_limit) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(adjacency)};
    if (es.info() != Eigen::Success) throw NumericalError("adjacency eigen-decomposition failed");
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    // dominant magnitude first; for a +/- pair the positive one first
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      double x = es.eigenvalues()(a), y = es.eigenvalues()(b);
      if (std::abs(x) != std::abs(y)) return std::abs(x) > std::abs(y);
      return x > y;
    });
    values.resize(take);
    vectors.resize(n, take);
    for (int k = 0; k < take; ++k) {
      values(k) = es.eigenvalues()(order[k]);
      vectors.col(k) = es.eigenvectors().col(order[k]);
    }
  } else {
    auto op = [&](const Eigen::MatrixXd& X) -> Eigen::MatrixXd { return adjacency * X; };
    auto pairs = linalg::subspace_iteration(op, n, take, 0x9e3779b97f4a7c15ULL, 5000, 1e-8);
    if (!pairs.converged) throw NumericalError("adjacency eigen-solver did not converge");
    values = pairs.values;
    vectors = pairs.vectors;
  }
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  for (int k = 0; k < take; ++k) {
    if (std::abs(values(k)) <= 1e-10 * scale) continue;
    emb.vectors.col(k) = vectors.col(k).cwiseAbs().cwiseMin(1.0);
  }
  return emb;
}

inline EigenEmbedding eigen_embedding(const LabeledGraph& g, int d_emb) {
  return eigen_embedding(g.adjacency(), d_emb);
}

/// Per level, a d_emb x 2^level table of counts.
struct PyramidHistogram {
  std::vector<Eigen::MatrixXi> levels;
  int max_level() const { return static_cast<int>(levels.size()) - 1; }
};

inline int pyramid_bin(double value, int level) {
  const int bins = 1 << level;
  int b = static_cast<int>(std::floor(std::clamp(value, 0.0, 1.0) * bins));
  return std::min(b, bins - 1);
}

inline PyramidHistogram build_histogram(const EigenEmbedding& emb, int max_level) {
  if (max_level < 0 || max_level > 20) throw ArgumentError("pyramid depth must lie in [0, 20]");
  PyramidHistogram h;
  for (int l = 0; l <= max_level; ++l) {
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(emb.dim(), 1 << l);
    for (int i = 0; i < emb.num_points(); ++i)
      for (int d = 0; d < emb.dim(); ++d) ++counts(d, pyramid_bin(emb.vectors(i, d), l));
    h.levels.push_back(std::move(counts));
  }
  return h;
}

/// Histogram intersection at every level.
inline std::vector<double> level_intersections(const PyramidHistogram& a, const PyramidHistogram& b) {
  if (a.levels.size() != b.levels.size() || a.levels.empty() || a.levels[0].rows() != b.levels[0].rows())
    throw ArgumentError("histograms differ in depth or dimension");
  std::vector<double> I;
  for (std::size_t l = 0; l < a.levels.size(); ++l) I.push_back(a.levels[l].cwiseMin(b.levels[l]).sum());
  return I;
}

inline double pyramid_match(const PyramidHistogram& a, const PyramidHistogram& b) {
  auto I = level_intersections(a, b);
  const int L = static_cast<int>(I.size()) - 1;
  double k = I[L];
  for (int l = 0; l < L; ++l) k += std::ldexp(I[l] - I[l + 1], -(L - l));
  return k;
}

inline double pyramid_match(const EigenEmbedding& a, const EigenEmbedding& b, int max_level) {
  if (a.dim() != b.dim()) throw ArgumentError("embedding dimensions differ");
  return pyramid_match(build_histogram(a, max_level), build_histogram(b, max_level));
}

/// Normalizes raw kernel values to weights; all-zero input gives uniform weights.
inline std::vector<double> normalize_kernels(const std::vector<double>& raw) {
  if (raw.empty()) return {};
  double total = 0.0;
  for (double k : raw) {
    if (!(k >= 0.0) || !std::isfinite(k)) throw ArgumentError("kernel values must be finite and nonnegative");
    total += k;
  }
  std::vector<double> w(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    w[i] = total > 0.0 ? raw[i] / total : 1.0 / static_cast<double>(raw.size());
  return w;
}

struct ImportanceWeights {
  std::vector<double> raw;
  std::vector<double> weights;
};

inline ImportanceWeights importance_weights(const EigenEmbedding& test, const std::vector<EigenEmbedding>& shards,
                                            int max_level) {
  if (shards.empty()) throw ArgumentError("at least one shard is required");
  ImportanceWeights out;
  auto ht = build_histogram(test, max_level);
  for (const auto& s : shards) {
    if (s.dim() != test.dim()) throw ArgumentError("embedding dimensions differ");
    out.raw.push_back(pyramid_match(ht, build_histogram(s, max_level)));
  }
  out.weights = normalize_kernels(out.raw);
  return out;
}

/// Replaces one raw kernel value and renormalizes; the other raw values are untouched.
inline ImportanceWeights update_single_weight(ImportanceWeights state, int shard, double kernel_value) {
  if (shard < 0 || shard >= static_cast<int>(state.raw.size())) throw ArgumentError("shard index out of range");
  state.raw[shard] = kernel_value;
  state.weights = normalize_kernels(state.raw);
  return state;
}

/// "shard_id weight" lines with 8 decimals, then "raw shard_id kernel_value" lines
/// holding the exact raw values.
inline std::string format_weights(const ImportanceWeights& w) {
  std::string out;
  for (std::size_t i = 0; i < w.weights.size(); ++i)
    out += std::to_string(i) + ' ' + io::format_fixed(w.weights[i], 8) + '\n';
  for (std::size_t i = 0; i < w.raw.size(); ++i)
    out += "raw " + std::to_string(i) + ' ' + io::format_exact(w.raw[i]) + '\n';
  return out;
}

/// Reads a weights file; weights are recomputed from the raw section.
inline ImportanceWeights parse_weights(std::string_view text, const std::string& source = "weights") {
  ImportanceWeights w;
  auto lines = io::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto tok = io::split_ws(lines[k]);
    if (tok.empty()) continue;
    if (tok[0] != "raw") continue;
    int shard = 0;
    double value = 0.0;
    if (tok.size() != 3 || !io::parse_number(tok[1], shard) || !io::parse_number(tok[2], value))
      throw ParseError(source, k + 1, "expected 'raw shard_id kernel_value'");
    if (shard != static_cast<int>(w.raw.size())) throw ParseError(source, k + 1, "raw entries out of order");
    w.raw.push_back(value);
  }
  w.weights = normalize_kernels(w.raw);
  return w;
}

}  // namespace guide
