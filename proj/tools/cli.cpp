#include "cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "evgraph/complexity.hpp"
#include "evgraph/errors.hpp"
#include "evgraph/network.hpp"
#include "evgraph/random.hpp"
#include "evgraph/run_config.hpp"
#include "evgraph/sampling.hpp"
#include "evgraph/training.hpp"

namespace evg::cli {

namespace {

using json = nlohmann::ordered_json;

constexpr const char* kVersion = "evgraph 0.1.0";

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (auto& c : f) {
    if (c == '_') c = '-';
  }
  return "--" + f;
}

bool is_bool_key(const std::string& key) {
  return key == "augment" || key == "two_conv_residual" || key == "self_loops" || key == "deterministic";
}

/// Options shared by every subcommand: --config plus one flag per config key.
struct Options {
  std::string config_file;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key=value configuration file");
    for (const auto& k : config_keys()) {
      auto& slot = values[k.name];
      if (is_bool_key(k.name)) {
        options[k.name] = app->add_option(flag_name(k.name), slot, k.help)->expected(0, 1)->default_str("true");
      } else {
        options[k.name] = app->add_option(flag_name(k.name), slot, k.help);
      }
    }
  }

  /// File first, then flags actually given on the command line.
  void apply(RunConfig& cfg) const {
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& [key, opt] : options) {
      if (opt->count() == 0) continue;
      const auto& v = values.at(key);
      cfg.set(key, v.empty() && is_bool_key(key) ? "true" : v);
    }
  }
};

void require_key(const RunConfig& cfg, const std::string& key, const std::string& what) {
  if (!cfg.is_set(key)) throw ConfigError("missing " + what + ": set '" + key + "' (" + flag_name(key) + ")");
}

Dataset load_data(const RunConfig& cfg) {
  if (cfg.is_set("nmnist")) {
    return load_nmnist(cfg.get("nmnist"), cfg.get_u64("max_train"), cfg.get_u64("max_test"), cfg.get_u64("seed"));
  }
  if (!cfg.is_set("dataset")) throw ConfigError("missing dataset path: set 'dataset' (--dataset) or 'nmnist' (--nmnist)");
  return load_dataset(cfg.get("dataset"), cfg.get_u64("seed"), cfg.get_double("test_fraction"));
}

json metrics_json(const EpochMetrics& m) {
  return json{{"type", "epoch"},         {"epoch", m.epoch},
              {"lr", m.lr},              {"train_loss", m.train_loss},
              {"train_accuracy", m.train_accuracy}, {"test_accuracy", m.test_accuracy}};
}

class MetricSink {
 public:
  MetricSink(std::ostream& out, const RunConfig& cfg) : out_(out) {
    if (cfg.is_set("log")) {
      log_.open(cfg.get("log"), std::ios::app);
      if (!log_) throw DataError("cannot open run log " + cfg.get("log"));
    }
  }
  void emit(const json& record) {
    const auto line = record.dump();
    out_ << line << '\n' << std::flush;
    if (log_.is_open()) log_ << line << '\n' << std::flush;
  }

 private:
  std::ostream& out_;
  std::ofstream log_;
};

int cmd_synth(const RunConfig& cfg, std::ostream& out) {
  require_key(cfg, "out", "output directory");
  if (cfg.get_int("classes") > kNumShapes) {
    throw ConfigError("config key 'classes': at most " + std::to_string(kNumShapes) + " synthetic shapes");
  }
  const auto samples = make_synthetic_samples(static_cast<int>(cfg.get_int("classes")),
                                              static_cast<int>(cfg.get_int("per_class")), cfg.get_u64("seed"),
                                              cfg.synth());
  write_dataset(cfg.get("out"), samples);
  std::size_t events = 0;
  for (const auto& s : samples) events += s.stream.size();
  out << json{{"type", "synth"}, {"out", cfg.get("out")}, {"samples", samples.size()}, {"events", events}}.dump()
      << '\n';
  return kOk;
}

int cmd_convert(const RunConfig& cfg, std::ostream& out) {
  require_key(cfg, "in", "input file");
  require_key(cfg, "out", "output file");
  const std::filesystem::path in = cfg.get("in");
  const std::filesystem::path dst = cfg.get("out");
  EventStream s;
  std::string format;
  if (in.extension() == ".bin") {
    s = read_nmnist_file(in);
    write_portable(s, dst);
    format = "portable";
  } else {
    s = read_portable(in);
    const auto bytes = encode_nmnist_bin(s);
    std::ofstream f(dst, std::ios::binary);
    if (!f) throw DataError("cannot write " + dst.string());
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    format = "nmnist";
  }
  out << json{{"type", "convert"}, {"out", dst.string()}, {"format", format}, {"events", s.size()}}.dump() << '\n';
  return kOk;
}

int cmd_sample(const RunConfig& cfg, std::ostream& out) {
  require_key(cfg, "in", "input file");
  require_key(cfg, "out", "output file");
  const auto s = read_portable(cfg.get("in"));
  auto sc = cfg.pipeline().sampling;
  sc.seed = cfg.get_u64("seed");
  const auto sampled = nonuniform_sample(s, sc);
  write_portable(sampled, std::filesystem::path(cfg.get("out")));
  out << json{{"type", "sample"}, {"in_events", s.size()}, {"out_events", sampled.size()}}.dump() << '\n';
  return kOk;
}

int cmd_build_graph(const RunConfig& cfg, std::ostream& out) {
  require_key(cfg, "in", "input file");
  require_key(cfg, "out", "output file");
  const auto g = build_radius_graph(read_portable(cfg.get("in")), cfg.pipeline().graph);
  write_graph(g, std::filesystem::path(cfg.get("out")));
  out << json{{"type", "graph"}, {"nodes", g.pos.size()}, {"edges", g.edges.size()}}.dump() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  const auto data = load_data(cfg);
  require_key(cfg, "out", "checkpoint path");
  const auto spec = cfg.model(data.num_classes, data.width, data.height);
  const auto tc = cfg.training();
  const auto pipeline = cfg.pipeline();
  const auto run_text = cfg.reproducible_text();

  const auto t0 = std::chrono::steady_clock::now();
  Network net(spec, tc.seed);
  MetricSink sink(out, cfg);
  sink.emit(json{{"type", "meta"},
                 {"version", kVersion},
                 {"config_hash", config_hash(run_text)},
                 {"seed", tc.seed},
                 {"preset", spec.preset},
                 {"classes", data.num_classes},
                 {"train_samples", data.train.size()},
                 {"test_samples", data.test.size()},
                 {"parameters", net.parameter_count()}});
  const auto report = train(net, data, tc, pipeline, [&](const EpochMetrics& m) { sink.emit(metrics_json(m)); });
  write_checkpoint(net.checkpoint(run_text), std::filesystem::path(cfg.get("out")));
  sink.emit(json{{"type", "final"},
                 {"config_hash", config_hash(run_text)},
                 {"seed", tc.seed},
                 {"test_accuracy", report.final_test_accuracy}});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  err << "trained " << tc.epochs << " epochs in " << secs << " s, checkpoint " << cfg.get("out") << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& flags_cfg, const Options& opts, std::ostream& out) {
  require_key(flags_cfg, "checkpoint", "checkpoint path");
  const auto ckpt = read_checkpoint(std::filesystem::path(flags_cfg.get("checkpoint")));
  RunConfig cfg = RunConfig::from_text(ckpt.run_config);
  opts.apply(cfg);
  cfg.validate();
  auto net = Network::from_checkpoint(ckpt);
  const auto data = load_data(cfg);
  if (data.num_classes > net.spec().num_classes) {
    throw ShapeError("dataset has " + std::to_string(data.num_classes) + " classes, checkpoint predicts " +
                     std::to_string(net.spec().num_classes));
  }
  const auto r = evaluate(net, data.test, cfg.pipeline(), cfg.get_u64("seed"), cfg.workers(),
                          static_cast<int>(cfg.get_int("batch")));
  out << json{{"type", "eval"},
              {"config_hash", config_hash(ckpt.run_config)},
              {"accuracy", r.accuracy},
              {"correct", r.correct},
              {"total", r.total}}
             .dump()
      << '\n';
  return kOk;
}

std::vector<complexity::GraphStats> read_stats_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read stats file '" + path + "' (config key 'stats')");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("stats file " + path + ": " + e.what());
  }
  const json& layers = doc.is_object() ? doc.at("layers") : doc;
  std::vector<complexity::GraphStats> stats;
  for (const auto& l : layers) stats.push_back({l.at("nodes").get<std::uint64_t>(), l.at("edges").get<std::uint64_t>()});
  return stats;
}

int cmd_flops(const RunConfig& cfg, std::ostream& out) {
  int classes = static_cast<int>(cfg.get_int("classes"));
  int width = static_cast<int>(cfg.get_int("width"));
  int height = static_cast<int>(cfg.get_int("height"));
  std::vector<complexity::GraphStats> stats;
  std::string source = cfg.get("stats");
  std::size_t measured = 0;
  if (source == "measure") {
    const auto pipeline = cfg.pipeline();
    const auto limit = static_cast<std::size_t>(cfg.get_int("stats_samples"));
    std::vector<Sample> samples;
    if (cfg.is_set("dataset") || cfg.is_set("nmnist")) {
      auto data = load_data(cfg);
      classes = data.num_classes;
      width = data.width;
      height = data.height;
      samples = std::move(data.train);
      source = "dataset";
    } else {
      const int shapes = std::min(classes, kNumShapes);
      const auto per_class = static_cast<int>((limit + static_cast<std::size_t>(shapes) - 1) / shapes);
      samples = make_synthetic_samples(shapes, per_class, cfg.get_u64("seed"), cfg.synth());
      source = "synthetic";
    }
    if (samples.size() > limit) samples.resize(limit);
    std::vector<EventGraph> graphs(samples.size());
    parallel_for(samples.size(), cfg.workers(), [&](std::size_t i) {
      graphs[i] = prepare_sample(samples[i], pipeline, false, cfg.get_u64("seed"), 0);
    });
    measured = graphs.size();
    stats = complexity::measure_graph_stats(cfg.model(classes, width, height), graphs);
  } else {
    stats = read_stats_file(source);
    source = "file";
  }
  const auto spec = cfg.model(classes, width, height);
  const auto report = complexity::model_report(spec, stats);

  json layers = json::array();
  for (const auto& l : report.layers) layers.push_back({{"name", l.name}, {"flops", l.flops}, {"params", l.params}});
  json graph_stats = json::array();
  for (const auto& s : stats) graph_stats.push_back({{"nodes", s.nodes}, {"edges", s.edges}});
  out << json{{"type", "flops"},
              {"preset", spec.preset},
              {"stats_source", source},
              {"graphs_measured", measured},
              {"graph_stats", graph_stats},
              {"layers", layers},
              {"total_flops", report.total_flops},
              {"total_params", report.total_params},
              {"gflops", std::round(report.gflops() * 100.0) / 100.0},
              {"megabytes", std::round(report.megabytes() * 100.0) / 100.0}}
             .dump(2)
      << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Event-stream graph construction and graph CNN classification"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  struct Sub {
    std::string name;
    std::string help;
    CLI::App* app = nullptr;
    Options opts;
  };
  std::vector<Sub> subs{{"synth", "write a synthetic moving-shape dataset", nullptr, {}},
                        {"convert", "convert between N-MNIST .bin and the portable text format", nullptr, {}},
                        {"sample", "non-uniform sampling of a portable event file", nullptr, {}},
                        {"build-graph", "build a radius graph from a portable event file", nullptr, {}},
                        {"train", "train a model and write a checkpoint", nullptr, {}},
                        {"eval", "evaluate a checkpoint on the test split", nullptr, {}},
                        {"flops", "FLOPs and parameter report for a preset", nullptr, {}}};
  for (auto& s : subs) {
    s.app = app.add_subcommand(s.name, s.help);
    s.opts.attach(s.app);
  }

  std::vector<std::string> argv_rev(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
  try {
    app.parse(argv_rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }

  try {
    for (auto& s : subs) {
      if (!s.app->parsed()) continue;
      RunConfig cfg;
      s.opts.apply(cfg);
      cfg.validate();
      if (s.name == "synth") return cmd_synth(cfg, out);
      if (s.name == "convert") return cmd_convert(cfg, out);
      if (s.name == "sample") return cmd_sample(cfg, out);
      if (s.name == "build-graph") return cmd_build_graph(cfg, out);
      if (s.name == "train") return cmd_train(cfg, out, err);
      if (s.name == "eval") return cmd_eval(cfg, s.opts, out);
      if (s.name == "flops") return cmd_flops(cfg, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const Error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}

}  // namespace evg::cli
