#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "guide/graph.hpp"
#include "guide/text_io.hpp"

namespace guide {

namespace detail {

inline bool skippable(std::string_view line) {
  auto t = io::trim(line);
  return t.empty() || t.front() == '#';
}

}  // namespace detail

/// Parses an edge list: one "u v" or "u v w" per line, '#' starts a comment line.
inline std::vector<Edge> parse_edges(std::string_view text, const std::string& source = "edges") {
  std::vector<Edge> edges;
  auto lines = io::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (detail::skippable(lines[k])) continue;
    auto tok = io::split_ws(lines[k]);
    Edge e;
    long long u = 0, v = 0;
    if ((tok.size() != 2 && tok.size() != 3) || !io::parse_number(tok[0], u) ||
        !io::parse_number(tok[1], v))
      throw ParseError(source, k + 1, "expected 'u v' or 'u v w'");
    if (tok.size() == 3 && !io::parse_number(tok[2], e.weight))
      throw ParseError(source, k + 1, "edge weight is not a number");
    if (u < 0 || v < 0 || u > INT32_MAX || v > INT32_MAX)
      throw ValidationError(source + ":" + std::to_string(k + 1) + ": node id out of range");
    e.u = static_cast<int>(u);
    e.v = static_cast<int>(v);
    edges.push_back(e);
  }
  return edges;
}

/// Parses a headerless CSV of reals, one row per node.
inline Eigen::MatrixXd parse_features(std::string_view text, const std::string& source = "features") {
  std::vector<std::vector<double>> rows;
  auto lines = io::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (io::trim(lines[k]).empty()) continue;
    auto cells = io::split_on(lines[k], ',');
    std::vector<double> row(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c)
      if (!io::parse_number(cells[c], row[c]))
        throw ParseError(source, k + 1, "column " + std::to_string(c + 1) + " is not a number");
    if (!rows.empty() && row.size() != rows.front().size())
      throw ParseError(source, k + 1,
                       "expected " + std::to_string(rows.front().size()) + " columns, found " +
                           std::to_string(row.size()));
    rows.push_back(std::move(row));
  }
  const Eigen::Index d = rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(static_cast<Eigen::Index>(i), j) = rows[i][j];
  return x;
}

inline std::vector<int> parse_labels(std::string_view text, const std::string& source = "labels") {
  std::vector<int> labels;
  auto lines = io::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto t = io::trim(lines[k]);
    if (t.empty()) continue;
    int y = 0;
    if (!io::parse_number(t, y)) throw ParseError(source, k + 1, "label is not an integer");
    if (y < 0) throw ValidationError(source + ":" + std::to_string(k + 1) + ": negative label");
    labels.push_back(y);
  }
  return labels;
}

/// Loads a training or test graph. The node count is the number of feature rows and
/// the class count is one past the largest label.
inline LabeledGraph load_graph(const std::filesystem::path& edge_path,
                               const std::filesystem::path& feature_path,
                               const std::filesystem::path& label_path,
                               bool require_all_classes = true) {
  auto edges = parse_edges(io::read_file(edge_path), edge_path.string());
  auto x = parse_features(io::read_file(feature_path), feature_path.string());
  auto y = parse_labels(io::read_file(label_path), label_path.string());
  const int h = y.empty() ? 1 : *std::max_element(y.begin(), y.end()) + 1;
  const int n = static_cast<int>(x.rows());
  LabeledGraph g(n, edges, std::move(x), std::move(y), h);
  if (require_all_classes) g.require_all_classes();
  return g;
}

inline std::string format_edges(const LabeledGraph& g) {
  std::string out;
  for (const auto& e : g.edges()) {
    out += std::to_string(e.u) + ' ' + std::to_string(e.v);
    if (e.weight != 1.0) out += ' ' + io::format_exact(e.weight);
    out += '\n';
  }
  return out;
}

inline std::string format_matrix_csv(const Eigen::MatrixXd& x) {
  std::string out;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      if (j) out += ',';
      out += io::format_exact(x(i, j));
    }
    out += '\n';
  }
  return out;
}

inline std::string format_labels(const std::vector<int>& labels) {
  std::string out;
  for (int y : labels) out += std::to_string(y) + '\n';
  return out;
}

inline void save_graph(const LabeledGraph& g, const std::filesystem::path& edge_path,
                       const std::filesystem::path& feature_path,
                       const std::filesystem::path& label_path) {
  io::write_file(edge_path, format_edges(g));
  io::write_file(feature_path, format_matrix_csv(g.features()));
  io::write_file(label_path, format_labels(g.labels()));
}

/// Writes edges.txt, features.csv and labels.txt under `dir`.
inline void save_graph_dir(const LabeledGraph& g, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_graph(g, dir / "edges.txt", dir / "features.csv", dir / "labels.txt");
}

inline LabeledGraph load_graph_dir(const std::filesystem::path& dir, bool require_all_classes = true) {
  return load_graph(dir / "edges.txt", dir / "features.csv", dir / "labels.txt",
                    require_all_classes);
}

// Partition files: one "node_id shard_id" pair per line.

inline std::string format_partition(const Partition& p) {
  std::string out;
  for (int i = 0; i < p.num_nodes(); ++i)
    out += std::to_string(i) + ' ' + std::to_string(p.assignment()[i]) + '\n';
  return out;
}

inline Partition parse_partition(std::string_view text, int num_shards,
                                 const std::string& source = "partition") {
  std::vector<std::pair<int, int>> pairs;
  auto lines = io::split_lines(text);
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (detail::skippable(lines[k])) continue;
    auto tok = io::split_ws(lines[k]);
    int node = 0, shard = 0;
    if (tok.size() != 2 || !io::parse_number(tok[0], node) || !io::parse_number(tok[1], shard))
      throw ParseError(source, k + 1, "expected 'node_id shard_id'");
    pairs.emplace_back(node, shard);
  }
  std::vector<int> assignment(pairs.size(), -1);
  for (auto [node, shard] : pairs) {
    if (node < 0 || node >= static_cast<int>(pairs.size()) || assignment[node] != -1)
      throw ValidationError(source + ": node ids must be a permutation of 0..n-1");
    assignment[node] = shard;
  }
  if (num_shards <= 0)
    num_shards = pairs.empty() ? 1 : *std::max_element(assignment.begin(), assignment.end()) + 1;
  return Partition(std::move(assignment), num_shards);
}

}  // namespace guide
