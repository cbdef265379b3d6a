#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "guide/guide.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace guide;
namespace fs = std::filesystem;

namespace {

LabeledGraph sbm(int n = 120, std::uint64_t seed = 1) {
  SbmParams sp;
  sp.num_nodes = n;
  sp.num_blocks = 3;
  sp.num_classes = 3;
  sp.feature_dim = 8;
  sp.p_in = 0.15;
  sp.p_out = 0.02;
  sp.homophily = 0.8;
  sp.seed = seed;
  return generate_sbm(sp);
}

EngineConfig small_config() {
  EngineConfig c;
  c.num_shards = 3;
  c.partitioner = PartitionerKind::Random;
  c.train.epochs = 30;
  c.train.hidden = 16;
  c.seed = 7;
  return c;
}

/// Shared trained fixture; every test copies before mutating.
const EnsembleState& trained() {
  static const EnsembleState st = train_all(sbm(), small_config());
  return st;
}

/// A graph where node `iso` has no edges.
LabeledGraph with_isolated(const LabeledGraph& g, int iso) {
  std::vector<Edge> keep;
  for (const auto& e : g.edges())
    if (e.u != iso && e.v != iso) keep.push_back(e);
  return LabeledGraph(g.num_nodes(), keep, g.features(), g.labels(), g.num_classes());
}

int node_with_foreign_neighbor(const EnsembleState& st) {
  for (int u = 0; u < st.graph.num_nodes(); ++u)
    for (int w : st.graph.neighbors(u))
      if (st.partition.shard_of(w) != st.partition.shard_of(u)) return u;
  return -1;
}

std::vector<std::string> all_file_contents(const fs::path& dir) {
  std::vector<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) out.push_back(io::read_file(e.path()));
  return out;
}

}  // namespace

TEST(TrainAll, ProducesOneModelPerShard) {
  SbmParams sp;
  sp.num_nodes = 200;
  sp.num_blocks = 4;
  sp.num_classes = 2;
  sp.seed = 4;
  auto g = generate_sbm(sp);
  auto cfg = small_config();
  cfg.num_shards = 4;
  auto st = train_all(g, cfg);
  ASSERT_EQ(st.num_shards(), 4);
  EXPECT_FALSE(st.partition.has_empty_shard());
  for (int j = 0; j < 4; ++j) {
    EXPECT_EQ(st.shards[j].subgraph.shard_id, j);
    EXPECT_TRUE(st.shards[j].model.all_finite());
    EXPECT_NO_THROW(check_degree_invariant(st.shards[j].subgraph, st.degrees));
  }
  EXPECT_EQ(st.weights, std::vector<double>(4, 0.25));
  EXPECT_EQ(st.revision, 0u);
}

TEST(TrainAll, RejectsSingleShard) {
  auto cfg = small_config();
  cfg.num_shards = 1;
  EXPECT_THROW(train_all(sbm(), cfg), ArgumentError);
}

TEST(TrainAll, Deterministic) {
  EXPECT_TRUE(train_all(sbm(), small_config()) == trained());
}

TEST(Unlearn, IsolatedNodeRetrainsOnlyItsShard) {
  const int iso = 17;
  auto cfg = small_config();
  auto g = with_isolated(sbm(), iso);
  auto st = train_all(g, cfg);
  auto res = unlearn(st, UnlearnRequest::node(iso));
  const int s = st.partition.shard_of(iso);
  EXPECT_EQ(res.retrained, std::vector<int>{s});
  for (int j = 0; j < st.num_shards(); ++j)
    if (j != s) EXPECT_TRUE(res.state.shards[j] == st.shards[j]) << "shard " << j;
  EXPECT_EQ(res.state.revision, 1u);
}

TEST(Unlearn, StrictModeRetrainsNeighborShards) {
  const auto& st = trained();
  const int u = node_with_foreign_neighbor(st);
  ASSERT_GE(u, 0);
  auto res = unlearn(st, UnlearnRequest::node(u));
  std::set<int> expect{st.partition.shard_of(u)};
  for (int w : st.graph.neighbors(u)) expect.insert(st.partition.shard_of(w));
  EXPECT_EQ(std::set<int>(res.retrained.begin(), res.retrained.end()), expect);
  EXPECT_GT(expect.size(), 1u);
  for (int w : st.graph.neighbors(u)) EXPECT_EQ(res.state.degrees.original_degree[w], st.degrees.original_degree[w] - 1);
}

TEST(Unlearn, LenientModeKeepsForeignShards) {
  auto st = trained();
  st.config.strict = false;
  const int u = node_with_foreign_neighbor(st);
  auto res = unlearn(st, UnlearnRequest::node(u));
  EXPECT_EQ(res.retrained, std::vector<int>{st.partition.shard_of(u)});
}

TEST(Unlearn, MatchesRetrainingFromScratch) {
  const auto& st = trained();
  for (int u : {0, 33, 71, node_with_foreign_neighbor(st)}) {
    auto res = unlearn(st, UnlearnRequest::node(u));
    const auto& after = res.state;
    for (int j = 0; j < st.num_shards(); ++j) {
      auto ref = oracle::scratch_shard(after.graph, st.partition, after.removed_nodes, st.config, j);
      EXPECT_TRUE(after.shards[j].subgraph == ref.subgraph) << "node " << u << " shard " << j;
      EXPECT_TRUE(after.shards[j].model == ref.model) << "node " << u << " shard " << j;
    }
  }
}

TEST(Unlearn, BatchEqualsSequential) {
  const auto& st = trained();
  std::vector<int> ids{3, 40, 90};
  auto batch = batch_unlearn(st, {UnlearnRequest::node(3), UnlearnRequest::node(40), UnlearnRequest::node(90)});
  auto seq = st;
  for (int u : ids) seq = unlearn(seq, UnlearnRequest::node(u)).state;
  EXPECT_EQ(batch.state.shards, seq.shards);
  EXPECT_EQ(batch.state.graph, seq.graph);
  EXPECT_EQ(batch.state.degrees, seq.degrees);
  EXPECT_EQ(batch.state.weights, seq.weights);
  EXPECT_EQ(batch.state.revision, 1u);
  EXPECT_EQ(seq.revision, 3u);
}

TEST(Unlearn, BatchRetrainsEachShardOnce) {
  auto st = trained();
  st.config.strict = false;
  auto a = st.partition.members(0), b = st.partition.members(1);
  auto res = batch_unlearn(st, {UnlearnRequest::node(a[0]), UnlearnRequest::node(a[1]), UnlearnRequest::node(b[0])});
  EXPECT_EQ(res.retrained, (std::vector<int>{0, 1}));
  EXPECT_EQ(res.state.audit.size(), 1u);
  EXPECT_EQ(res.state.audit[0].retrained, (std::vector<int>{0, 1}));
}

TEST(Unlearn, ConflictingBatchesAreRejected) {
  const auto& st = trained();
  EXPECT_THROW(batch_unlearn(st, {UnlearnRequest::node(3), UnlearnRequest::feature(3)}), RequestError);
  EXPECT_THROW(batch_unlearn(st, {UnlearnRequest::node(3), UnlearnRequest::node(3)}), RequestError);
  int w = st.graph.neighbors(3).empty() ? -1 : st.graph.neighbors(3)[0];
  ASSERT_GE(w, 0);
  EXPECT_THROW(batch_unlearn(st, {UnlearnRequest::edge(3, w), UnlearnRequest::node(w)}), RequestError);
  EXPECT_THROW(batch_unlearn(st, {}), RequestError);
}

TEST(Unlearn, UnknownOrRepeatedIdsAreRejected) {
  const auto& st = trained();
  EXPECT_THROW(unlearn(st, UnlearnRequest::node(-1)), RequestError);
  EXPECT_THROW(unlearn(st, UnlearnRequest::node(st.graph.num_nodes())), RequestError);
  auto once = unlearn(st, UnlearnRequest::node(5)).state;
  EXPECT_THROW(unlearn(once, UnlearnRequest::node(5)), RequestError);
  EXPECT_THROW(unlearn(once, UnlearnRequest::feature(5)), RequestError);
  EXPECT_THROW(unlearn(st, UnlearnRequest::edge(0, 0)), RequestError);
  // a rejected request leaves the input untouched
  EXPECT_EQ(once.revision, 1u);
}

TEST(Unlearn, FeatureRequestZeroesOneRow) {
  const auto& st = trained();
  const int u = 12;
  auto res = unlearn(st, UnlearnRequest::feature(u));
  EXPECT_EQ(res.retrained, std::vector<int>{st.partition.shard_of(u)});
  EXPECT_TRUE(res.state.graph.features().row(u).isZero());
  EXPECT_EQ(res.state.graph.num_edges(), st.graph.num_edges());
  const auto& rs = res.state.shards[st.partition.shard_of(u)].subgraph;
  EXPECT_TRUE(rs.features.row(rs.local_index_of(u)).isZero());
  EXPECT_EQ(res.state.removed_features, std::set<int>{u});
}

TEST(Unlearn, EdgeRequestDecrementsBothEndpoints) {
  const auto& st = trained();
  const int u = node_with_foreign_neighbor(st);
  int w = -1;
  for (int x : st.graph.neighbors(u))
    if (st.partition.shard_of(x) != st.partition.shard_of(u)) w = x;
  auto res = unlearn(st, UnlearnRequest::edge(w, u));
  EXPECT_FALSE(res.state.graph.has_edge(u, w));
  EXPECT_EQ(res.state.degrees.original_degree[u], st.degrees.original_degree[u] - 1);
  EXPECT_EQ(res.state.degrees.original_degree[w], st.degrees.original_degree[w] - 1);
  std::set<int> expect{st.partition.shard_of(u), st.partition.shard_of(w)};
  EXPECT_EQ(std::set<int>(res.retrained.begin(), res.retrained.end()), expect);
  EXPECT_THROW(unlearn(res.state, UnlearnRequest::edge(u, w)), RequestError);
  for (const auto& s : res.state.shards) EXPECT_NO_THROW(check_degree_invariant(s.subgraph, res.state.degrees));
}

TEST(Unlearn, RemovedNodeLeavesNoTrace) {
  testutil::TempDir tmp("engine_trace");
  const auto& st = trained();
  const int u = node_with_foreign_neighbor(st);
  auto res = unlearn(st, UnlearnRequest::node(u));
  for (const auto& s : res.state.shards) {
    EXPECT_EQ(std::count(s.subgraph.real_nodes.begin(), s.subgraph.real_nodes.end(), u), 0);
    for (const auto& syn : s.subgraph.synthetic) EXPECT_NE(syn.owner, u);
  }
  save_state(res.state, tmp.path());
  std::vector<std::string> needles;
  for (Eigen::Index k = 0; k < st.graph.feature_dim(); ++k)
    needles.push_back(io::format_exact(st.graph.features()(u, k)));
  for (const auto& body : all_file_contents(tmp.path()))
    for (const auto& n : needles) EXPECT_EQ(body.find(n), std::string::npos) << n;
}

TEST(Evaluate, MetricExamples) {
  std::vector<int> t{0, 1, 0, 1, 0, 1};
  EXPECT_EQ(accuracy(t, t), 1.0);
  EXPECT_EQ(macro_f1(t, t), 1.0);
  std::vector<int> c(6, 0);
  EXPECT_EQ(accuracy(t, c), 0.5);
  EXPECT_NEAR(macro_f1(t, c), 1.0 / 3.0, 1e-15);
  std::vector<int> p{0, 0, 1, 1, 2, 2};
  EXPECT_NEAR(macro_f1(t, p), oracle::macro_f1(t, p), 1e-15);
  EXPECT_THROW(accuracy({}, {}), ArgumentError);
}

TEST(Evaluate, ReadOnlyAndWeightsSumToOne) {
  auto g = sbm(150, 2);
  auto split = split_inductive(g, 0.25, 3);
  auto cfg = small_config();
  cfg.train.epochs = 200;
  auto st = train_all(split.train, cfg);
  const auto before = st;
  auto m1 = evaluate(st, split.test);
  auto m2 = evaluate(st, split.test);
  EXPECT_TRUE(st == before);
  EXPECT_FALSE(st.reference.has_value());
  EXPECT_EQ(m1.accuracy, m2.accuracy);
  EXPECT_EQ(m1.weights, m2.weights);
  double s = 0.0;
  for (double w : m1.weights) s += w;
  EXPECT_NEAR(s, 1.0, 1e-12);
  EXPECT_GT(m1.accuracy, 1.0 / 3.0);
  auto avg = evaluate(st, split.test, Aggregation::Average);
  EXPECT_EQ(avg.weights, std::vector<double>(3, 1.0 / 3.0));
  // attaching the same reference reproduces the on-the-fly weights
  attach_reference(st, split.test);
  EXPECT_EQ(st.revision, 0u);
  auto m3 = evaluate(st, split.test);
  for (std::size_t j = 0; j < m1.weights.size(); ++j) EXPECT_NEAR(m3.weights[j], m1.weights[j], 1e-12);
}

TEST(Evaluate, WeightsTrackUnlearning) {
  auto g = sbm(150, 2);
  auto split = split_inductive(g, 0.25, 3);
  auto st = train_all(split.train, small_config(), &split.test);
  std::uint64_t rev = st.revision;
  for (int u : {2, 50, 99}) {
    st = unlearn(st, UnlearnRequest::node(u)).state;
    EXPECT_GT(st.revision, rev);
    rev = st.revision;
    EXPECT_EQ(st.weights, normalize_kernels(st.raw_kernels()));
    auto ht = build_histogram(*st.reference, st.config.pyramid.levels);
    for (const auto& s : st.shards) {
      auto hs = build_histogram(eigen_embedding(s.subgraph.local_adjacency(), st.config.pyramid.embedding_dim),
                                st.config.pyramid.levels);
      EXPECT_EQ(*s.raw_kernel, pyramid_match(ht, hs));
    }
  }
  EXPECT_EQ(st.audit.size(), 3u);
}

TEST(Persistence, RoundTripIsDeep) {
  testutil::TempDir tmp("engine_state");
  auto g = sbm(150, 2);
  auto split = split_inductive(g, 0.25, 3);
  auto st = train_all(split.train, small_config(), &split.test);
  st = unlearn(st, UnlearnRequest::node(9)).state;
  st = unlearn(st, UnlearnRequest::feature(10)).state;
  save_state(st, tmp.path());
  auto back = load_state(tmp.path());
  EXPECT_TRUE(back == st);
  EXPECT_EQ(back.audit.size(), st.audit.size());
  EXPECT_EQ(back.audit.back().retrained, st.audit.back().retrained);
  EXPECT_EQ(evaluate(back, split.test).accuracy, evaluate(st, split.test).accuracy);
  // saving again over the same directory is stable
  save_state(back, tmp.path());
  EXPECT_TRUE(load_state(tmp.path()) == st);
}

TEST(Persistence, TruncatedModelNamesTheShard) {
  testutil::TempDir tmp("engine_trunc");
  save_state(trained(), tmp.path());
  auto f = tmp / "shard_1" / "model.txt";
  auto body = io::read_file(f);
  testutil::write(f, body.substr(0, body.size() / 2));
  try {
    load_state(tmp.path());
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("shard 1"), std::string::npos) << e.what();
  }
}

TEST(Persistence, NewerFormatIsRejected) {
  testutil::TempDir tmp("engine_version");
  save_state(trained(), tmp.path());
  auto m = nlohmann::json::parse(io::read_file(tmp / "manifest.json"));
  m["format_version"] = kStateFormatVersion + 1;
  testutil::write(tmp / "manifest.json", m.dump());
  EXPECT_THROW(load_state(tmp.path()), VersionError);
  EXPECT_THROW(load_state(tmp / "missing"), LoadError);
}

TEST(Repartition, RetrainsEverythingAndSkipsRemovedNodes) {
  auto st = unlearn(trained(), UnlearnRequest::node(4)).state;
  auto next = repartition_state(st, st.config);
  EXPECT_EQ(next.revision, st.revision + 1);
  for (const auto& s : next.shards) {
    EXPECT_EQ(std::count(s.subgraph.real_nodes.begin(), s.subgraph.real_nodes.end(), 4), 0);
    EXPECT_NO_THROW(check_degree_invariant(s.subgraph, next.degrees));
  }
  EXPECT_EQ(next.audit.back().kind, "repartition");
}
