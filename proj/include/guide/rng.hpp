#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace guide {

using Rng = std::mt19937_64;

/// Derives an independent stream seed from a base seed and a key path, e.g.
/// (seed, shard, owner, ordinal). Equal keys always yield equal seeds.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> keys) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (keys.size() + 1));
  auto push = [&](std::uint64_t x) {
    words.push_back(static_cast<std::uint32_t>(x));
    words.push_back(static_cast<std::uint32_t>(x >> 32));
  };
  push(base);
  for (auto k : keys) push(k);
  std::seed_seq seq(words.begin(), words.end());
  std::uint32_t halves[2];
  seq.generate(halves, halves + 2);
  return (static_cast<std::uint64_t>(halves[1]) << 32) | halves[0];
}

inline Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = normal(rng);
  return m;
}

}  // namespace guide
