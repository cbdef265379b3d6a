#include <gtest/gtest.h>

#include <random>

#include "guide/guide.hpp"
#include "oracles.hpp"

using namespace guide;

namespace {

/// Two 4-cliques {0..3}, {4..7}, each holding two nodes of each of two classes.
LabeledGraph two_cliques(bool bridge) {
  std::vector<std::pair<int, int>> e;
  for (int base : {0, 4})
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) e.push_back({base + i, base + j});
  if (bridge) e.push_back({3, 4});
  return oracle::make_graph(8, e, {0, 1, 0, 1, 0, 1, 0, 1}, 2);
}

Eigen::MatrixXd random_orthonormal(int n, int v, std::uint64_t seed) {
  Rng rng(seed);
  return linalg::orthonormalize(gaussian_matrix(n, v, rng));
}

double max_dev(const Eigen::MatrixXd& H) {
  return (H.transpose() * H - Eigen::MatrixXd::Identity(H.cols(), H.cols())).cwiseAbs().maxCoeff();
}

bool same_split(const std::vector<int>& a, const std::vector<int>& b) {
  // equal as bipartitions, up to swapping shard names
  bool same = true, flipped = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same &= a[i] == b[i];
    flipped &= a[i] != b[i];
  }
  return same || flipped;
}

}  // namespace

// ---------------------------------------------------------------------------
// gpi_solve_H

TEST(GpiSolve, OrthonormalLinearTermIsReachedInOneStep) {
  auto g = oracle::make_graph(3, {}, {0, 0, 1}, 2);
  auto lap = laplacian(g);
  Eigen::MatrixXd B(3, 2);
  B << 1, 0, 0, 1, 0, 0;
  GpfbConfig cfg;
  cfg.shift_gamma = 0.0;
  cfg.max_inner_iters = 1;
  auto F = build_label_indicator(g).F;
  auto res = gpi_solve_H(lap, F, B, 0.0, random_orthonormal(3, 2, 1), cfg);
  EXPECT_LT((res.H - B).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GpiSolve, ShiftOnlyKeepsStartingPoint) {
  auto g = oracle::make_graph(5, {}, {0, 1, 0, 1, 0}, 2);
  auto F = build_label_indicator(g).F;
  GpfbConfig cfg;
  cfg.shift_gamma = 0.7;
  Eigen::MatrixXd H0 = random_orthonormal(5, 2, 9);
  auto res = gpi_solve_H(laplacian(g), F, Eigen::MatrixXd::Zero(5, 2), 0.0, H0, cfg);
  EXPECT_LT((res.H - H0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(GpiSolve, TwoComponentsConvergeToIndicatorSpace) {
  auto g = oracle::make_graph(4, {{0, 1}, {2, 3}}, {0, 0, 1, 1}, 2);
  auto lap = laplacian(g);
  auto F = build_label_indicator(g).F;
  GpfbConfig cfg;
  cfg.max_inner_iters = 500;
  cfg.tol = 1e-14;
  auto res = gpi_solve_H(lap, F, Eigen::MatrixXd::Zero(4, 2), 0.0, random_orthonormal(4, 2, 3), cfg);
  Eigen::MatrixXd LH = lap.w_minus_d * res.H;
  EXPECT_NEAR(res.H.cwiseProduct(LH).sum(), 0.0, 1e-8);
  // the projector onto span(H) equals the projector onto the component indicators
  Eigen::MatrixXd I(4, 2);
  I << 1, 0, 1, 0, 0, 1, 0, 1;
  I /= std::sqrt(2.0);
  EXPECT_LT((res.H * res.H.transpose() - I * I.transpose()).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(GpiSolve, ObjectiveIsMonotoneAndIterateOrthonormal) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    SbmParams sp;
    sp.num_nodes = 120;
    sp.num_blocks = 3;
    sp.num_classes = 3;
    sp.seed = seed;
    auto g = generate_sbm(sp);
    GpfbConfig cfg;
    cfg.alpha = 0.1;
    cfg.tol = 1e-12;
    auto in = solver_inputs(g, 3, cfg.alpha);
    auto res = gpi_solve_H(in.lap, in.F, in.B, cfg.alpha, random_orthonormal(120, 3, seed), cfg);
    for (std::size_t k = 1; k < res.objective.size(); ++k)
      EXPECT_GE(res.objective[k], res.objective[k - 1] - 1e-9) << "step " << k;
    EXPECT_LT(max_dev(res.H), 1e-8);
    // the bound really dominates the spectrum of D - W + alpha F F^T
    Eigen::MatrixXd Q = -Eigen::MatrixXd(in.lap.w_minus_d) + cfg.alpha * in.F * in.F.transpose();
    EXPECT_GE(res.gamma, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(Q).eigenvalues().maxCoeff());
  }
}

TEST(GpiSolve, RejectsShapeMismatch) {
  auto g = oracle::make_graph(3, {}, {0, 1, 0}, 2);
  auto F = build_label_indicator(g).F;
  EXPECT_THROW(gpi_solve_H(laplacian(g), F, Eigen::MatrixXd::Zero(3, 2), 0.0, Eigen::MatrixXd::Zero(4, 2), {}),
               ArgumentError);
}

// ---------------------------------------------------------------------------
// Rotation and indicator steps

TEST(UpdateRotation, AlignedEmbeddingGivesIdentity) {
  Partition Y({0, 0, 1, 1, 1, 2}, 3);
  Eigen::VectorXd d(6);
  d << 1, 2, 3, 1, 2, 4;
  // unit columns along the D-weighted indicator
  Eigen::MatrixXd H = scaled_indicator(Y, d).colwise().normalized();
  EXPECT_LT(max_dev(H), 1e-12);
  auto R = update_rotation(H, d, Y);
  EXPECT_LT((R - Eigen::MatrixXd::Identity(3, 3)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(UpdateRotation, PermutedColumnsGivePermutation) {
  Partition Y({0, 1, 1, 2, 2, 2}, 3);
  Eigen::VectorXd d = Eigen::VectorXd::Ones(6);
  Eigen::MatrixXd G = scaled_indicator(Y, d);
  Eigen::MatrixXd Pm = Eigen::MatrixXd::Zero(3, 3);
  Pm(0, 2) = Pm(1, 0) = Pm(2, 1) = 1.0;
  Eigen::MatrixXd H = G * Pm;
  auto R = update_rotation(H, d, Y);
  EXPECT_LT((R - Pm.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_LT((H * R - G).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(UpdateRotation, ProcrustesNeverWorseThanIdentity) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 30; ++t) {
    const int n = 12, v = 3;
    auto Y = random_partition(n, v, rng());
    Eigen::VectorXd d(n);
    for (auto& x : d) x = 1.0 + static_cast<double>(rng() % 5);
    Eigen::MatrixXd H = random_orthonormal(n, v, rng());
    auto R = update_rotation(H, d, Y);
    EXPECT_LT(max_dev(R), 1e-10);
    auto G = scaled_indicator(Y, d);
    EXPECT_LE((H * R - G).squaredNorm(), (H - G).squaredNorm() + 1e-12);
  }
}

TEST(UpdateRotation, EmptyShardIsArgumentError) {
  Partition Y({0, 0, 0}, 2);
  EXPECT_THROW(update_rotation(Eigen::MatrixXd::Zero(3, 2), Eigen::VectorXd::Ones(3), Y), ArgumentError);
}

TEST(UpdateIndicator, FixedPointAndIdentity) {
  Partition Y0({0, 1, 1, 0, 2, 2, 2}, 3);
  Eigen::VectorXd d = Eigen::VectorXd::Ones(7);
  auto H = scaled_indicator(Y0, d);
  auto res = update_indicator(H, Eigen::MatrixXd::Identity(3, 3), d, Y0, 10);
  EXPECT_EQ(res.partition, Y0);
  EXPECT_EQ(res.sweeps, 1);

  Partition I({0, 1}, 2);
  auto r2 = update_indicator(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                             Eigen::VectorXd::Ones(2), I, 5);
  EXPECT_EQ(r2.partition, I);
  EXPECT_THROW(update_indicator(Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2),
                                Eigen::VectorXd::Ones(2), Partition({0, 0}, 2), 5),
               ArgumentError);
}

TEST(UpdateIndicator, ObjectiveMatchesOracleAndNeverDecreases) {
  std::mt19937_64 rng(21);
  const int n = 6, v = 2;
  // R breaks the symmetry between shards, so enumerate labelled indicators
  auto all = oracle::all_indicators(n, v);
  for (int t = 0; t < 40; ++t) {
    Eigen::MatrixXd H = random_orthonormal(n, v, rng());
    Eigen::MatrixXd R = random_orthonormal(v, v, rng());
    Eigen::VectorXd d = Eigen::VectorXd::Ones(n);
    auto Y0 = random_partition(n, v, rng());
    auto res = update_indicator(H, R, d, Y0, 50);
    double best = -1e300;
    for (const auto& a : all) {
      best = std::max(best, oracle::indicator_objective(H, R, d, a, v));
      // the library objective agrees with the direct formula
      EXPECT_NEAR(indicator_objective(H, R, d, Partition(a, v)), oracle::indicator_objective(H, R, d, a, v), 1e-12);
    }
    const double f0 = oracle::indicator_objective(H, R, d, Y0.assignment(), v);
    const double f = oracle::indicator_objective(H, R, d, res.partition.assignment(), v);
    EXPECT_GE(f, f0 - 1e-12);
    EXPECT_LE(f, best + 1e-12);
    for (std::size_t k = 1; k < res.objective.size(); ++k) EXPECT_GE(res.objective[k], res.objective[k - 1] - 1e-9);
    EXPECT_FALSE(res.partition.has_empty_shard());
  }
}

TEST(UpdateIndicator, VetoKeepsShardsNonEmpty) {
  // every row prefers shard 0, but shard 1 must keep one member
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(4, 2);
  H.col(0).setConstant(0.5);
  H(3, 1) = 1e-3;
  auto res = update_indicator(H, Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Ones(4), Partition({0, 1, 1, 1}, 2), 20);
  EXPECT_FALSE(res.partition.has_empty_shard());
}

// ---------------------------------------------------------------------------
// Solvers

TEST(GpfbFast, SeparatesBridgedCliques) {
  auto g = two_cliques(true);
  GpfbConfig cfg;
  cfg.alpha = 0.01;
  auto p = gpfb_fast(g, 2, cfg);
  auto s = score_partition(p, g);
  EXPECT_EQ(s.combined, 0.0);
  // oracle: lowest ratio cut among all zero-score bipartitions
  double best = 1e300;
  std::vector<int> arg;
  for (const auto& a : oracle::all_bipartitions(8)) {
    if (oracle::balance(a, 2) + oracle::fairness(a, 2, g.labels(), 2) != 0.0) continue;
    double rc = oracle::ratio_cut(a, 2, g);
    if (rc < best) best = rc, arg = a;
  }
  EXPECT_TRUE(same_split(p.assignment(), arg));
  EXPECT_NEAR(s.ratio_cut, best, 1e-12);
}

TEST(GpfbFast, EmptyGraphLargeAlphaIsFair) {
  auto g = oracle::make_graph(4, {}, {0, 0, 1, 1}, 2);
  GpfbConfig cfg;
  cfg.alpha = 100.0;
  auto p = gpfb_fast(g, 2, cfg);
  auto s = score_partition(p, g);
  EXPECT_EQ(s.balance, 0.0);
  EXPECT_EQ(s.fairness, 0.0);
  double best = -1.0;
  for (const auto& a : oracle::all_bipartitions(4))
    best = std::max(best, oracle::balance(a, 2) + oracle::fairness(a, 2, g.labels(), 2));
  EXPECT_EQ(s.combined, best);
}

TEST(GpfbFast, Deterministic) {
  SbmParams sp;
  sp.num_nodes = 100;
  sp.num_blocks = 4;
  sp.num_classes = 2;
  sp.seed = 2;
  auto g = generate_sbm(sp);
  GpfbConfig cfg;
  cfg.seed = 5;
  EXPECT_EQ(gpfb_fast(g, 4, cfg), gpfb_fast(g, 4, cfg));
}

TEST(GpfbSr, DisjointCliquesZeroCutAndScore) {
  auto g = two_cliques(false);
  auto p = gpfb_sr(g, 2, {});
  auto s = score_partition(p, g);
  EXPECT_EQ(s.combined, 0.0);
  EXPECT_EQ(s.ratio_cut, 0.0);
}

TEST(GpfbSr, SingleOuterIterationWithoutRotationAgreesWithFast) {
  auto g = two_cliques(true);
  GpfbConfig cfg;
  cfg.beta = 0.0;
  cfg.max_outer_iters = 1;
  cfg.seed = 3;
  auto sr = gpfb_sr(g, 2, cfg);
  auto fast = gpfb_fast(g, 2, cfg);
  EXPECT_TRUE(same_split(sr.assignment(), fast.assignment()));
}

TEST(GpfbSr, DeterministicAndMonotone) {
  SbmParams sp;
  sp.num_nodes = 150;
  sp.num_blocks = 3;
  sp.num_classes = 3;
  sp.seed = 8;
  auto g = generate_sbm(sp);
  GpfbConfig cfg;
  cfg.seed = 1;
  auto a = gpfb_sr_detailed(g, 3, cfg);
  auto b = gpfb_sr_detailed(g, 3, cfg);
  EXPECT_EQ(a.partition, b.partition);
  for (std::size_t k = 1; k < a.objective.size(); ++k) EXPECT_LE(a.objective[k], a.objective[k - 1] + 1e-8);
  EXPECT_LT(max_dev(a.H), 1e-8);
  EXPECT_FALSE(a.partition.has_empty_shard());
}

TEST(GpfbSr, NoWorseThanMedianBipartition) {
  for (int n : {6, 8, 10}) {
    auto all = oracle::all_bipartitions(n);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      SbmParams sp;
      sp.num_nodes = n;
      sp.num_blocks = 2;
      sp.num_classes = 2;
      sp.p_in = 0.6;
      sp.p_out = 0.1;
      sp.feature_dim = 2;
      sp.seed = seed;
      auto g = generate_sbm(sp);
      std::vector<double> scores;
      for (const auto& a : all) scores.push_back(oracle::balance(a, 2) + oracle::fairness(a, 2, g.labels(), 2));
      std::sort(scores.begin(), scores.end());
      GpfbConfig cfg;
      cfg.seed = seed;
      auto p = gpfb_sr(g, 2, cfg);
      EXPECT_GE(score_partition(p, g).combined, scores[(scores.size() - 1) / 2] - 1e-12) << "n=" << n
                                                                                        << " seed=" << seed;
    }
  }
}

TEST(Solvers, RejectSingleShard) {
  auto g = two_cliques(true);
  EXPECT_THROW(gpfb_fast(g, 1, {}), ArgumentError);
  EXPECT_THROW(gpfb_sr(g, 1, {}), ArgumentError);
  GpfbConfig bad;
  bad.tol = 0.0;
  EXPECT_THROW(gpfb_fast(g, 2, bad), ArgumentError);
}

// ---------------------------------------------------------------------------
// K-means, random baseline, scores

TEST(KMeans, SeparatedBlobs) {
  Eigen::MatrixXd X(6, 2);
  X << 0, 0, 0, 0, 0, 0, 10, 10, 10, 10, 10, 10;
  auto r = kmeans_rows(X, 2);
  EXPECT_EQ(r.partition.shard_sizes(), (std::vector<int>{3, 3}));
  EXPECT_EQ(r.partition.shard_of(0), r.partition.shard_of(2));
  EXPECT_NE(r.partition.shard_of(0), r.partition.shard_of(3));
}

TEST(KMeans, OneClusterPerPoint) {
  Eigen::MatrixXd X(4, 1);
  X << 0, 1, 2, 3;
  auto r = kmeans_rows(X, 4);
  EXPECT_EQ(r.partition.shard_sizes(), (std::vector<int>{1, 1, 1, 1}));
  // duplicates still yield non-empty clusters
  EXPECT_FALSE(kmeans_rows(Eigen::MatrixXd::Zero(4, 2), 4).partition.has_empty_shard());
  EXPECT_THROW(kmeans_rows(X, 5), ArgumentError);
}

TEST(KMeans, NoWorseThanRandomAssignments) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z;
  for (int t = 0; t < 10; ++t) {
    Eigen::MatrixXd X(8, 2);
    for (auto& x : X.reshaped()) x = z(rng);
    auto r = kmeans_rows(X, 2);
    const double ours = within_cluster_ss(X, r.partition.assignment(), 2);
    double total = 0.0;
    for (int k = 0; k < 50; ++k) total += within_cluster_ss(X, random_partition(8, 2, rng()).assignment(), 2);
    EXPECT_LE(ours, total / 50);
  }
}

TEST(RandomPartition, SizesAndDeterminism) {
  EXPECT_EQ(random_partition(8, 2, 1).shard_sizes(), (std::vector<int>{4, 4}));
  auto s = random_partition(7, 2, 1).shard_sizes();
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, (std::vector<int>{3, 4}));
  EXPECT_EQ(random_partition(50, 3, 9), random_partition(50, 3, 9));
  EXPECT_THROW(random_partition(2, 3, 0), ArgumentError);
}

TEST(RandomPartition, FairnessVanishesWithSize) {
  std::vector<int> labels(1000);
  for (int i = 0; i < 1000; ++i) labels[i] = i % 4;
  double total = 0.0;
  for (int s = 0; s < 100; ++s) total += std::abs(fairness_score(random_partition(1000, 4, s), labels, 4));
  EXPECT_LT(total / 100, 0.1);
}

TEST(Scores, BalanceExamples) {
  EXPECT_EQ(balance_score(Partition({0, 0, 0, 0, 1, 1, 1, 1}, 2)), 0.0);
  EXPECT_EQ(balance_score(Partition({0, 0, 0, 0, 0, 0, 1, 1}, 2)), -0.25);
  EXPECT_EQ(balance_score(Partition(std::vector<int>(8, 0), 2)), -0.5);
}

TEST(Scores, FairnessExamples) {
  std::vector<int> labels{0, 0, 0, 0, 1, 1, 1, 1};
  EXPECT_EQ(fairness_score(Partition({0, 0, 1, 1, 0, 0, 1, 1}, 2), labels, 2), 0.0);
  EXPECT_EQ(fairness_score(Partition({0, 0, 0, 0, 1, 1, 1, 1}, 2), labels, 2), -0.5);
  EXPECT_EQ(fairness_score(Partition(std::vector<int>(8, 0), 1), labels, 2), 0.0);
  EXPECT_THROW(fairness_score(Partition(std::vector<int>(8, 0), 2), labels, 2), ArgumentError);
}

TEST(Scores, AgreeWithDirectFormulas) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 30; ++t) {
    auto g = oracle::random_graph(25, 0.2, 3, 1, rng());
    auto p = random_partition(25, 3, rng());
    auto a = p.assignment();
    std::swap(a[0], a[24]);
    a[1] = a[2];
    Partition q(a, 3);
    if (q.has_empty_shard()) continue;
    EXPECT_NEAR(balance_score(q), oracle::balance(a, 3), 1e-12);
    EXPECT_NEAR(fairness_score(q, g.labels(), 3), oracle::fairness(a, 3, g.labels(), 3), 1e-12);
    EXPECT_NEAR(ratio_cut(q, g), oracle::ratio_cut(a, 3, g), 1e-9);
  }
}

TEST(Scores, RatioCutExamples) {
  auto g = two_cliques(false);
  EXPECT_EQ(ratio_cut(Partition({0, 0, 0, 0, 1, 1, 1, 1}, 2), g), 0.0);
  auto e = oracle::make_graph(2, {{0, 1}}, {0, 0}, 1);
  EXPECT_DOUBLE_EQ(ratio_cut(Partition({0, 1}, 2), e), 2.0);
  auto empty = oracle::make_graph(5, {}, {0, 0, 0, 0, 0}, 1);
  EXPECT_EQ(ratio_cut(Partition({0, 1, 0, 1, 1}, 2), empty), 0.0);
}

TEST(Scores, FormatHasSixDecimals) {
  PartitionScores s{-0.25, -0.125, -0.375, 2.0};
  auto text = format_scores(s);
  EXPECT_NE(text.find("balance=-0.250000"), std::string::npos) << text;
  EXPECT_NE(text.find("fairness=-0.125000"), std::string::npos) << text;
  EXPECT_NE(text.find("ratio_cut=2.000000"), std::string::npos) << text;
}

TEST(PartitionFile, RoundTrip) {
  auto p = random_partition(30, 4, 2);
  EXPECT_EQ(parse_partition(format_partition(p), 4), p);
  EXPECT_THROW(parse_partition("0 1\n0 0\n", 2), ValidationError);
  EXPECT_THROW(parse_partition("0 x\n", 2), ParseError);
}
