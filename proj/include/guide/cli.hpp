#pragma once

// Command-line front end. run_cli() holds all logic so it can be driven in-process.
//
// Exit codes: 0 success, 1 request error, 2 usage or validation error, 3 numerical error.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "guide/guide.hpp"

namespace guide::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline constexpr const char* kStateEnv = "GUIDE_STATE_DIR";

struct Options {
  std::string edges, features, labels, data;
  std::string test_edges, test_features, test_labels, test_data;
  std::string state;
  std::string format = "text";
  std::string partitioner = "sr", strategy = "mixup", model = "meangnn", aggregation = "similarity";
  int v = 4;
  double alpha = 0.01, beta = 2.0, tau = 1.0;
  int d_emb = 6, levels = 4;
  std::uint64_t seed = 0;
  double lr = 0.01, weight_decay = 5e-4;
  int epochs = 200, hidden = 64, sgc_steps = 2;
  bool lenient = false;
  int threads = 1;
  std::vector<int> nodes, features_out;
  std::vector<int> edge_pairs;
  // generate-sbm / bench
  std::string out;
  int n = 200, blocks = 2, classes = 2, dim = 16;
  double p_in = 0.1, p_out = 0.01, homophily = 0.5, edge_homophily = 0.0, test_fraction = 0.3;
  std::vector<int> batch_sizes{1, 2, 4, 8, 16, 32, 64};
  int repeats = 3;
};

/// Emits one record as a json line or as "key=value" pairs.
class Printer {
 public:
  Printer(std::ostream& out, bool as_json) : out_(out), json_(as_json) {}

  void emit(const json& rec) {
    if (json_) {
      out_ << rec.dump() << '\n';
      return;
    }
    bool first = true;
    for (const auto& [k, v] : rec.items()) {
      out_ << (first ? "" : " ") << k << '=';
      if (v.is_string()) out_ << v.get<std::string>();
      else if (v.is_number_float()) out_ << io::format_fixed(v.get<double>(), 6);
      else out_ << v.dump();
      first = false;
    }
    out_ << '\n';
  }

 private:
  std::ostream& out_;
  bool json_;
};

namespace detail {

inline LabeledGraph load_training(const Options& o) {
  if (!o.data.empty()) return load_graph_dir(o.data);
  if (o.edges.empty() || o.features.empty() || o.labels.empty())
    throw ArgumentError("training graph needs --data or all of --edges, --features, --labels");
  return load_graph(o.edges, o.features, o.labels);
}

inline std::optional<LabeledGraph> load_test(const Options& o, bool required) {
  if (!o.test_data.empty()) return load_graph_dir(o.test_data, false);
  if (!o.test_edges.empty() && !o.test_features.empty() && !o.test_labels.empty())
    return load_graph(o.test_edges, o.test_features, o.test_labels, false);
  if (!o.test_edges.empty() || !o.test_features.empty() || !o.test_labels.empty())
    throw ArgumentError("test graph needs all of --test-edges, --test-features, --test-labels");
  if (required) throw ArgumentError("test graph needs --test-data or --test-edges, --test-features, --test-labels");
  return std::nullopt;
}

inline fs::path state_dir(const Options& o) {
  if (!o.state.empty()) return o.state;
  if (const char* env = std::getenv(kStateEnv); env && *env) return env;
  return "guide_state";
}

inline EngineConfig engine_config(const Options& o) {
  EngineConfig c;
  c.num_shards = o.v;
  c.partitioner = parse_partitioner(o.partitioner);
  c.gpfb.alpha = o.alpha;
  c.gpfb.beta = o.beta;
  c.gpfb.seed = o.seed;
  c.strategy = parse_repair_strategy(o.strategy);
  c.tau = o.tau;
  c.model = parse_model_kind(o.model);
  c.train.learning_rate = o.lr;
  c.train.epochs = o.epochs;
  c.train.weight_decay = o.weight_decay;
  c.train.hidden = o.hidden;
  c.train.sgc_steps = o.sgc_steps;
  c.pyramid.embedding_dim = o.d_emb;
  c.pyramid.levels = o.levels;
  c.seed = o.seed;
  c.strict = !o.lenient;
  c.threads = o.threads;
  c.validate();
  return c;
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline json partition_record(const std::string& cmd, const EngineConfig& c, const Partition& p, const LabeledGraph& g,
                             double secs) {
  auto s = score_partition(p, g);
  return {{"command", cmd},       {"partitioner", to_string(c.partitioner)},
          {"num_nodes", g.num_nodes()}, {"num_shards", p.num_shards()},
          {"balance", s.balance}, {"fairness", s.fairness},
          {"combined", s.combined}, {"ratio_cut", s.ratio_cut},
          {"seconds", secs}};
}

inline std::vector<std::string> config_args(const fs::path& path) {
  std::vector<std::string> args;
  auto lines = io::split_lines(io::read_file(path));
  for (std::size_t k = 0; k < lines.size(); ++k) {
    auto line = io::trim(lines[k]);
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(path.string(), k + 1, "expected key=value");
    auto key = io::trim(line.substr(0, eq));
    auto val = io::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path.string(), k + 1, "empty key");
    args.push_back("--" + std::string(key));
    for (auto part : io::split_ws(val)) args.emplace_back(part);
  }
  return args;
}

}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run_cli(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
  // a config file is spliced in right after the subcommand so that flags win
  for (std::size_t k = 1; k + 1 < args.size(); ++k) {
    if (args[k] != "--config") continue;
    try {
      auto extra = detail::config_args(args[k + 1]);
      std::vector<std::string> merged{args[0]};
      merged.insert(merged.end(), extra.begin(), extra.end());
      merged.insert(merged.end(), args.begin() + 1, args.begin() + static_cast<long>(k));
      merged.insert(merged.end(), args.begin() + static_cast<long>(k) + 2, args.end());
      args = std::move(merged);
    } catch (const Error& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    } catch (const std::filesystem::filesystem_error& e) {
      err << "error: " << e.what() << '\n';
      return 2;
    }
    break;
  }

  Options o;
  std::string config_path;
  CLI::App app{"Sharded graph unlearning toolkit"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  auto add_graph = [&](CLI::App* s) {
    s->add_option("--data", o.data, "directory with edges.txt, features.csv, labels.txt");
    s->add_option("--edges", o.edges, "edge list");
    s->add_option("--features", o.features, "feature CSV");
    s->add_option("--labels", o.labels, "label file");
  };
  auto add_test = [&](CLI::App* s) {
    s->add_option("--test-data", o.test_data, "test graph directory");
    s->add_option("--test-edges", o.test_edges, "test edge list");
    s->add_option("--test-features", o.test_features, "test feature CSV");
    s->add_option("--test-labels", o.test_labels, "test label file");
  };
  auto add_common = [&](CLI::App* s) {
    s->add_option("--state", o.state, std::string("state directory (env ") + kStateEnv + ")");
    s->add_option("--format", o.format, "output format")->check(CLI::IsMember({"text", "json"}));
    s->add_option("--seed", o.seed, "global seed");
    s->add_option("--config", config_path, "key=value config file");
  };
  auto add_partition = [&](CLI::App* s) {
    s->add_option("--v", o.v, "number of shards");
    s->add_option("--partitioner", o.partitioner, "fast, sr or random")
        ->check(CLI::IsMember({"fast", "sr", "random"}));
    s->add_option("--alpha", o.alpha, "fairness weight");
    s->add_option("--beta", o.beta, "balance weight");
  };
  auto add_repair = [&](CLI::App* s) {
    s->add_option("--strategy", o.strategy, "none, zero, mirror or mixup")
        ->check(CLI::IsMember({"none", "zero", "mirror", "mixup"}));
    s->add_option("--tau", o.tau, "MixUp upper bound");
  };
  auto add_train = [&](CLI::App* s) {
    s->add_option("--model", o.model, "sgc or meangnn")->check(CLI::IsMember({"sgc", "meangnn"}));
    s->add_option("--lr", o.lr, "learning rate");
    s->add_option("--epochs", o.epochs, "training epochs");
    s->add_option("--weight-decay", o.weight_decay, "weight decay");
    s->add_option("--hidden", o.hidden, "hidden width");
    s->add_option("--sgc-steps", o.sgc_steps, "SGC propagation steps");
    s->add_option("--d-emb", o.d_emb, "kernel embedding dimension");
    s->add_option("--levels", o.levels, "pyramid depth");
    s->add_option("--threads", o.threads, "training threads (0 = all cores)");
    s->add_flag("--lenient", o.lenient, "do not retrain neighbor shards on node removal");
  };

  auto* partition = app.add_subcommand("partition", "partition a training graph");
  auto* repair_cmd = app.add_subcommand("repair", "repair the shards of a partitioned graph");
  auto* train = app.add_subcommand("train", "repair and train every shard");
  auto* evaluate_cmd = app.add_subcommand("evaluate", "evaluate a trained state on a test graph");
  auto* unlearn_cmd = app.add_subcommand("unlearn", "unlearn nodes, edges or features");
  auto* pipeline = app.add_subcommand("pipeline", "partition, repair, train and evaluate");
  auto* bench = app.add_subcommand("bench", "time partitioning and batch unlearning on SBM graphs");
  auto* gen = app.add_subcommand("generate-sbm", "write a synthetic train/test graph pair");
  auto* repartition = app.add_subcommand("repartition", "recompute the partition and retrain everything");

  for (auto* s : {partition, repair_cmd, train, evaluate_cmd, unlearn_cmd, pipeline, bench, gen, repartition})
    add_common(s);
  add_graph(partition);
  add_partition(partition);
  add_repair(repair_cmd);
  add_repair(train);
  add_train(train);
  add_test(train);
  add_test(evaluate_cmd);
  evaluate_cmd->add_option("--aggregation", o.aggregation, "similarity or average")
      ->check(CLI::IsMember({"similarity", "average"}));
  unlearn_cmd->add_option("--node", o.nodes, "node id")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  unlearn_cmd->add_option("--feature", o.features_out, "node id whose features are removed")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  unlearn_cmd->add_option("--edge", o.edge_pairs, "edge endpoints u v")
      ->expected(2)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  for (auto* s : {pipeline, repartition}) {
    add_partition(s);
    add_repair(s);
    add_train(s);
  }
  add_graph(pipeline);
  add_test(pipeline);
  for (auto* s : {gen, bench}) {
    s->add_option("--n", o.n, "node count");
    s->add_option("--blocks", o.blocks, "block count");
    s->add_option("--classes", o.classes, "class count");
    s->add_option("--dim", o.dim, "feature dimension");
    s->add_option("--p-in", o.p_in, "within-block edge probability");
    s->add_option("--p-out", o.p_out, "between-block edge probability");
    s->add_option("--homophily", o.homophily, "feature signal strength in [0, 1]");
    s->add_option("--edge-homophily", o.edge_homophily, "same-label edge bias in [0, 1]");
  }
  gen->add_option("--out", o.out, "output directory")->required();
  gen->add_option("--test-fraction", o.test_fraction, "held-out fraction");
  add_partition(bench);
  add_repair(bench);
  add_train(bench);
  bench->add_option("--batch-sizes", o.batch_sizes, "batch sizes")->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  bench->add_option("--repeats", o.repeats, "repetitions per measurement (minimum is reported)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  Printer print(out, o.format == "json");
  const fs::path dir = detail::state_dir(o);
  try {
    if (*partition) {
      auto cfg = detail::engine_config(o);
      auto g = detail::load_training(o);
      auto t0 = std::chrono::steady_clock::now();
      auto p = run_partitioner(g, cfg);
      double secs = detail::seconds_since(t0);
      fs::create_directories(dir);
      save_graph_dir(g, dir / "graph");
      io::write_file(dir / "partition.txt", format_partition(p));
      io::write_file(dir / "stage.json", json{{"config", config_to_json(cfg)}}.dump(2) + '\n');
      print.emit(detail::partition_record("partition", cfg, p, g, secs));
    } else if (*repair_cmd || *train) {
      auto g = load_graph_dir(dir / "graph", false);
      if (!fs::exists(dir / "stage.json")) throw ArgumentError(dir.string() + ": run 'partition' first");
      auto staged = config_from_json(nlohmann::json::parse(io::read_file(dir / "stage.json")).at("config"));
      auto cfg = detail::engine_config(o);
      cfg.num_shards = staged.num_shards;
      cfg.partitioner = staged.partitioner;
      cfg.gpfb = staged.gpfb;
      if (repair_cmd->count("--seed") == 0 && train->count("--seed") == 0) cfg.seed = staged.seed;
      auto p = parse_partition(io::read_file(dir / "partition.txt"), cfg.num_shards, "partition.txt");
      if (*repair_cmd) {
        auto rec = DegreeRecord::of(g);
        int synthetic = 0, real = 0;
        for (int j = 0; j < p.num_shards(); ++j) {
          auto rs = repair(p, g, rec, j, cfg.strategy, cfg.tau, repair_seed(cfg.seed));
          check_degree_invariant(rs, rec);
          save_repaired(rs, dir / ("shard_" + std::to_string(j)));
          synthetic += static_cast<int>(rs.synthetic.size());
          real += rs.num_real();
        }
        print.emit({{"command", "repair"}, {"strategy", to_string(cfg.strategy)}, {"num_shards", p.num_shards()},
                    {"real_nodes", real}, {"synthetic_nodes", synthetic}});
      } else {
        auto test = detail::load_test(o, false);
        auto t0 = std::chrono::steady_clock::now();
        auto st = train_with_partition(g, p, cfg, test ? &*test : nullptr);
        double secs = detail::seconds_since(t0);
        save_state(st, dir);
        double loss = 0.0;
        for (const auto& s : st.shards) loss += s.model.final_loss;
        for (const auto& s : st.shards) {
          std::set<int> ys(s.subgraph.labels.begin(), s.subgraph.labels.begin() + s.subgraph.num_real());
          if (ys.size() == 1)
            err << "warning: shard " << s.subgraph.shard_id << " has a single class; its model is constant\n";
        }
        print.emit({{"command", "train"}, {"model", to_string(cfg.model)}, {"num_shards", st.num_shards()},
                    {"revision", st.revision}, {"mean_final_loss", loss / st.num_shards()}, {"seconds", secs}});
      }
    } else if (*evaluate_cmd) {
      auto st = load_state(dir);
      auto test = detail::load_test(o, true);
      auto agg = o.aggregation == "average" ? Aggregation::Average : Aggregation::Similarity;
      auto m = evaluate(st, *test, agg);
      print.emit({{"command", "evaluate"}, {"aggregation", o.aggregation}, {"accuracy", m.accuracy},
                  {"macro_f1", m.macro_f1}, {"shard_accuracy", m.shard_accuracy}, {"weights", m.weights},
                  {"revision", st.revision}});
    } else if (*unlearn_cmd) {
      std::vector<UnlearnRequest> reqs;
      for (int u : o.nodes) reqs.push_back(UnlearnRequest::node(u));
      for (int u : o.features_out) reqs.push_back(UnlearnRequest::feature(u));
      for (std::size_t k = 0; k + 1 < o.edge_pairs.size(); k += 2)
        reqs.push_back(UnlearnRequest::edge(o.edge_pairs[k], o.edge_pairs[k + 1]));
      if (reqs.empty()) throw ArgumentError("nothing to unlearn: pass --node, --edge or --feature");
      auto st = load_state(dir);
      auto res = batch_unlearn(st, reqs);
      save_state(res.state, dir);
      const auto& e = res.state.audit.back();
      print.emit({{"command", "unlearn"}, {"kind", e.kind}, {"ids", e.ids}, {"retrained", res.retrained},
                  {"seconds", res.seconds}, {"revision", res.state.revision}});
    } else if (*pipeline) {
      auto cfg = detail::engine_config(o);
      auto g = detail::load_training(o);
      auto test = detail::load_test(o, false);
      auto t0 = std::chrono::steady_clock::now();
      auto st = train_all(g, cfg, test ? &*test : nullptr);
      double secs = detail::seconds_since(t0);
      save_state(st, dir);
      auto s = score_partition(st.partition, g);
      json rec{{"command", "pipeline"}, {"num_shards", st.num_shards()}, {"balance", s.balance},
               {"fairness", s.fairness}, {"ratio_cut", s.ratio_cut}, {"accuracy", nullptr},
               {"macro_f1", nullptr}, {"seconds", secs}};
      if (test) {
        auto m = evaluate(st, *test);
        rec["accuracy"] = m.accuracy;
        rec["macro_f1"] = m.macro_f1;
      }
      print.emit(rec);
    } else if (*gen) {
      SbmParams sp;
      sp.num_nodes = o.n;
      sp.num_blocks = o.blocks;
      sp.num_classes = o.classes;
      sp.feature_dim = o.dim;
      sp.p_in = o.p_in;
      sp.p_out = o.p_out;
      sp.homophily = o.homophily;
      sp.edge_homophily = o.edge_homophily;
      sp.seed = o.seed;
      auto g = generate_sbm(sp);
      auto split = split_inductive(g, o.test_fraction, derive_seed(o.seed, {1}));
      save_graph_dir(split.train, fs::path(o.out) / "train");
      save_graph_dir(split.test, fs::path(o.out) / "test");
      print.emit({{"command", "generate-sbm"}, {"out", o.out}, {"num_nodes", g.num_nodes()},
                  {"num_edges", g.num_edges()}, {"train_nodes", split.train.num_nodes()},
                  {"test_nodes", split.test.num_nodes()}});
    } else if (*bench) {
      auto cfg = detail::engine_config(o);
      SbmParams sp;
      sp.num_nodes = o.n;
      sp.num_blocks = o.blocks;
      sp.num_classes = o.classes;
      sp.feature_dim = o.dim;
      sp.p_in = o.p_in;
      sp.p_out = o.p_out;
      sp.homophily = o.homophily;
      sp.edge_homophily = o.edge_homophily;
      sp.seed = o.seed;
      auto g = generate_sbm(sp);
      for (auto kind : {PartitionerKind::Random, PartitionerKind::Fast, PartitionerKind::SR}) {
        auto c = cfg;
        c.partitioner = kind;
        auto t0 = std::chrono::steady_clock::now();
        auto p = run_partitioner(g, c);
        auto rec = detail::partition_record("bench", c, p, g, detail::seconds_since(t0));
        rec["stage"] = "partition";
        print.emit(rec);
      }
      auto st = train_all(g, cfg);
      Rng rng(derive_seed(o.seed, {2}));
      std::vector<int> order(g.num_nodes());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      for (int b : o.batch_sizes) {
        if (b < 1 || b > g.num_nodes()) throw ArgumentError("batch size out of range");
        std::vector<UnlearnRequest> reqs;
        for (int k = 0; k < b; ++k) reqs.push_back(UnlearnRequest::node(order[k]));
        double best = 1e300;
        std::size_t shards = 0;
        for (int r = 0; r < std::max(1, o.repeats); ++r) {
          auto res = batch_unlearn(st, reqs);
          best = std::min(best, res.seconds);
          shards = res.retrained.size();
        }
        print.emit({{"command", "bench"}, {"stage", "unlearn"}, {"batch_size", b}, {"retrained", shards},
                    {"seconds", best}});
      }
    } else if (*repartition) {
      auto st = load_state(dir);
      if (!st.removed_nodes.empty() || !st.removed_edges.empty() || !st.removed_features.empty())
        err << "warning: repartitioning after unlearning; later unlearning is no longer comparable with "
               "retraining on the original partition\n";
      auto cfg = detail::engine_config(o);
      auto next = repartition_state(st, cfg);
      save_state(next, dir);
      print.emit(detail::partition_record("repartition", cfg, next.partition, next.graph, 0.0));
    }
  } catch (const RequestError& e) {
    err << "request error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << '\n';
    return 3;
  } catch (const ConsistencyError& e) {
    err << "consistency error: " << e.what() << '\n';
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const json::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}

}  // namespace guide::cli
