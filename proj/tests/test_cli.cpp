#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>

#include "guide/cli.hpp"
#include "test_util.hpp"

using namespace guide;
using json = nlohmann::ordered_json;

namespace {

const std::string kData = GUIDE_DATA_DIR;

struct Run {
  int code;
  std::string out, err;

  std::vector<json> records() const {
    std::vector<json> r;
    std::istringstream in(out);
    for (std::string line; std::getline(in, line);)
      if (!line.empty()) r.push_back(json::parse(line));
    return r;
  }
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  int code = cli::run_cli(std::move(args), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> keys(const json& j) {
  std::vector<std::string> k;
  for (const auto& [key, v] : j.items()) k.push_back(key);
  return k;
}

/// Small, fast training flags shared by most invocations.
std::vector<std::string> fast(std::vector<std::string> args) {
  for (const char* a : {"--epochs", "20", "--hidden", "8", "--format", "json"}) args.emplace_back(a);
  return args;
}

}  // namespace

TEST(Cli, StagedPipelineKeysAndExitCodes) {
  testutil::TempDir tmp("cli_staged");
  const auto state = (tmp / "state").string();
  auto p = run({"partition", "--data", kData + "/sbm/train", "--v", "4", "--partitioner", "fast", "--state", state,
                "--format", "json"});
  ASSERT_EQ(p.code, 0) << p.err;
  EXPECT_EQ(keys(p.records().at(0)), (std::vector<std::string>{"command", "partitioner", "num_nodes", "num_shards",
                                                                "balance", "fairness", "combined", "ratio_cut",
                                                                "seconds"}));

  auto r = run({"repair", "--state", state, "--strategy", "mirror", "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(keys(r.records().at(0)),
            (std::vector<std::string>{"command", "strategy", "num_shards", "real_nodes", "synthetic_nodes"}));

  auto t = run(fast({"train", "--state", state, "--test-data", kData + "/sbm/test"}));
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_EQ(keys(t.records().at(0)),
            (std::vector<std::string>{"command", "model", "num_shards", "revision", "mean_final_loss", "seconds"}));

  auto e = run({"evaluate", "--state", state, "--test-data", kData + "/sbm/test", "--format", "json"});
  ASSERT_EQ(e.code, 0) << e.err;
  auto er = e.records().at(0);
  EXPECT_EQ(keys(er), (std::vector<std::string>{"command", "aggregation", "accuracy", "macro_f1", "shard_accuracy",
                                                "weights", "revision"}));
  EXPECT_EQ(er["shard_accuracy"].size(), 4u);

  auto u = run({"unlearn", "--state", state, "--node", "3", "--format", "json"});
  ASSERT_EQ(u.code, 0) << u.err;
  auto ur = u.records().at(0);
  EXPECT_EQ(keys(ur), (std::vector<std::string>{"command", "kind", "ids", "retrained", "seconds", "revision"}));
  EXPECT_EQ(ur["revision"], 1);

  auto again = run({"unlearn", "--state", state, "--node", "3"});
  EXPECT_EQ(again.code, 1);
  EXPECT_NE(again.err.find("already"), std::string::npos) << again.err;

  auto e2 = run({"evaluate", "--state", state, "--test-data", kData + "/sbm/test", "--format", "json"});
  EXPECT_EQ(e2.records().at(0)["revision"], 1);

  auto rp = run(fast({"repartition", "--state", state, "--v", "4", "--partitioner", "random"}));
  ASSERT_EQ(rp.code, 0) << rp.err;
  EXPECT_NE(rp.err.find("warning"), std::string::npos);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run({"partition", "--bogus"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"partition", "--v", "1", "--data", kData + "/sbm/train"}).code, 2);
  EXPECT_EQ(run({"partition", "--data", "/nonexistent/dir"}).code, 2);
  EXPECT_EQ(run({"evaluate", "--state", "/nonexistent/state", "--test-data", kData + "/sbm/test"}).code, 2);
  EXPECT_EQ(run({"train", "--model", "transformer"}).code, 2);
  EXPECT_EQ(run({"--help"}).code, 0);
}

TEST(Cli, RandomPartitionIsSeedDeterministic) {
  testutil::TempDir tmp("cli_random");
  auto part = [&](const std::string& sub, const std::string& seed) {
    auto dir = tmp / sub;
    auto r = run({"partition", "--data", kData + "/sbm/train", "--partitioner", "random", "--seed", seed, "--state",
                  dir.string()});
    EXPECT_EQ(r.code, 0) << r.err;
    return io::read_file(dir / "partition.txt");
  };
  EXPECT_EQ(part("a", "11"), part("b", "11"));
  EXPECT_NE(part("a", "11"), part("c", "12"));
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
  testutil::TempDir tmp("cli_config");
  testutil::write(tmp / "run.cfg", "# shards\nv = 3\npartitioner = random\nformat = json\n");
  auto r = run({"partition", "--config", (tmp / "run.cfg").string(), "--data", kData + "/sbm/train", "--state",
                (tmp / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.records().at(0)["num_shards"], 3);
  EXPECT_EQ(r.records().at(0)["partitioner"], "random");
  auto o = run({"partition", "--config", (tmp / "run.cfg").string(), "--v", "2", "--data", kData + "/sbm/train",
                "--state", (tmp / "s").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  EXPECT_EQ(o.records().at(0)["num_shards"], 2);
  testutil::write(tmp / "bad.cfg", "v 3\n");
  auto b = run({"partition", "--config", (tmp / "bad.cfg").string()});
  EXPECT_EQ(b.code, 2);
  EXPECT_NE(b.err.find(":1:"), std::string::npos) << b.err;
}

TEST(Cli, StateDirectoryFromEnvironment) {
  testutil::TempDir tmp("cli_env");
  ::setenv(cli::kStateEnv, (tmp / "envstate").string().c_str(), 1);
  auto r = run({"partition", "--data", kData + "/sbm/train", "--partitioner", "random"});
  ::unsetenv(cli::kStateEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(tmp / "envstate" / "partition.txt"));
}

TEST(Cli, PipelineAndTextFormat) {
  testutil::TempDir tmp("cli_pipeline");
  auto r = run({"pipeline", "--data", kData + "/sbm/train", "--test-data", kData + "/sbm/test", "--partitioner",
                "fast", "--model", "sgc", "--epochs", "20", "--state", (tmp / "s").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.out.rfind("command=pipeline num_shards=4 balance=", 0), 0u) << r.out;
  EXPECT_NE(r.out.find(" accuracy=0."), std::string::npos) << r.out;
}

TEST(Cli, GenerateSbmWritesBothSplits) {
  testutil::TempDir tmp("cli_gen");
  auto r = run({"generate-sbm", "--out", tmp.path().string(), "--n", "60", "--classes", "3", "--seed", "2",
                "--format", "json"});
  ASSERT_EQ(r.code, 0) << r.err;
  auto rec = r.records().at(0);
  EXPECT_EQ(keys(rec), (std::vector<std::string>{"command", "out", "num_nodes", "num_edges", "train_nodes",
                                                 "test_nodes"}));
  EXPECT_EQ(rec["train_nodes"].get<int>() + rec["test_nodes"].get<int>(), 60);
  EXPECT_NO_THROW(load_graph_dir(tmp / "train"));
}
