#include "evgraph/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

#include "evgraph/errors.hpp"

namespace evg {

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys{
      {"k", "8", "max events per sampling leaf"},
      {"min_cell_xy", "1", "smallest sampling cell in pixels"},
      {"min_cell_t", "1", "smallest sampling cell in microseconds"},
      {"radius", "3", "graph radius R"},
      {"alpha", "1", "spatial distance weight"},
      {"beta", "0.5e-5", "temporal distance weight per us^2"},
      {"dmax", "32", "max out-degree"},
      {"window_ms", "30", "window length in milliseconds"},
      {"augment", "true", "random scale/flip/rotation during training"},
      {"preset", "rgcnn_small", "gcnn_small, rgcnn_small, gcnn_large or rgcnn_large"},
      {"clusters", "", "pooling schedule such as 2x2,4x4,7x7 (empty = preset default)"},
      {"degree", "1", "B-spline degree m"},
      {"kernel", "5", "spline kernel size per dimension"},
      {"two_conv_residual", "false", "two convolutions in the residual main path"},
      {"self_loops", "false", "add self-loops to every convolution graph"},
      {"dropout", "0.5", "dropout after the first FC layer"},
      {"epochs", "150", "training epochs"},
      {"lr", "0.001", "Adam learning rate"},
      {"batch", "64", "mini-batch size"},
      {"decay_epochs", "60,110", "epochs after which lr is multiplied by decay_factor"},
      {"decay_factor", "0.1", "learning-rate decay factor"},
      {"seed", "0", "master seed"},
      {"workers", "1", "preprocessing threads"},
      {"deterministic", "false", "force serial execution"},
      {"dataset", "", "dataset directory (index.tsv)"},
      {"nmnist", "", "N-MNIST root with Train/ and Test/"},
      {"max_train", "0", "cap on N-MNIST training files (0 = all)"},
      {"max_test", "0", "cap on N-MNIST test files (0 = all)"},
      {"test_fraction", "0.2", "held-out share for datasets without a split"},
      {"classes", "3", "synthetic classes"},
      {"per_class", "200", "synthetic samples per class"},
      {"synth_duration_ms", "100", "synthetic stream length"},
      {"synth_rate", "60", "synthetic events per millisecond"},
      {"synth_noise", "0.05", "synthetic noise share"},
      {"width", "34", "sensor width"},
      {"height", "34", "sensor height"},
      {"in", "", "input path"},
      {"out", "", "output path"},
      {"checkpoint", "", "checkpoint to evaluate"},
      {"stats", "measure", "graph statistics: JSON file or 'measure'"},
      {"stats_samples", "100", "streams used when measuring graph statistics"},
      {"log", "", "run log (JSON lines, appended)"},
  };
  return keys;
}

RunConfig::RunConfig() {
  for (const auto& k : config_keys()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second = value;
}

const std::string& RunConfig::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::merge_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    if (!values_.count(key)) {
      throw ConfigError("config line " + std::to_string(lineno) + ": unknown config key '" + key + "'");
    }
    values_[key] = trim(line.substr(eq + 1));
  }
}

void RunConfig::merge_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  merge_text(ss.str());
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + "=" + values_.at(k.name) + "\n";
  return out;
}

std::string RunConfig::reproducible_text() const {
  static const std::set<std::string> skip{"in", "out", "log", "checkpoint", "workers", "deterministic"};
  std::string out;
  for (const auto& k : config_keys()) {
    if (!skip.count(k.name)) out += k.name + "=" + values_.at(k.name) + "\n";
  }
  return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
  RunConfig c;
  c.merge_text(text);
  return c;
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const auto& s = get(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  }
  return v;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  const auto& s = get(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw ConfigError("config key '" + key + "': expected a non-negative integer, got '" + s + "'");
  }
  return v;
}

double RunConfig::get_double(const std::string& key) const {
  const auto& s = get(key);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (s.empty() || used != s.size()) throw ConfigError("config key '" + key + "': expected a number, got '" + s + "'");
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  const auto& s = get(key);
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

namespace {

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "': " + what);
}

std::string rewrap(const std::string& key, const std::exception& e) {
  return "config key '" + key + "': " + e.what();
}

}  // namespace

void RunConfig::validate() const {
  for (const char* key : {"k", "min_cell_xy", "min_cell_t", "dmax", "degree", "kernel", "epochs", "batch", "workers",
                          "classes", "per_class", "width", "height", "stats_samples"}) {
    require(get_int(key) >= 1, key, "must be >= 1");
  }
  for (const char* key : {"radius", "alpha", "beta", "window_ms", "lr", "decay_factor", "synth_duration_ms"}) {
    require(get_double(key) > 0.0, key, "must be > 0");
  }
  get_u64("seed");
  get_u64("max_train");
  get_u64("max_test");
  get_bool("augment");
  get_bool("two_conv_residual");
  get_bool("self_loops");
  get_bool("deterministic");
  require(get_double("synth_rate") >= 0.0, "synth_rate", "must be >= 0");
  const double noise = get_double("synth_noise");
  require(noise >= 0.0 && noise <= 1.0, "synth_noise", "must lie in [0, 1]");
  const double drop = get_double("dropout");
  require(drop >= 0.0 && drop < 1.0, "dropout", "must lie in [0, 1)");
  const double tf = get_double("test_fraction");
  require(tf >= 0.0 && tf < 1.0, "test_fraction", "must lie in [0, 1)");
  require(std::find(kPresets.begin(), kPresets.end(), get("preset")) != kPresets.end(), "preset",
          "unknown preset '" + get("preset") + "'");
  require(get_int("kernel") >= get_int("degree") + 1, "kernel", "must be at least degree + 1");
  training();
  try {
    if (is_set("clusters")) parse_cluster_list(get("clusters"));
  } catch (const Error& e) {
    throw ConfigError(rewrap("clusters", e));
  }
}

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig p;
  p.sampling.k = static_cast<int>(get_int("k"));
  p.sampling.min_cell_xy = static_cast<int>(get_int("min_cell_xy"));
  p.sampling.min_cell_t = get_int("min_cell_t");
  p.graph.radius = get_double("radius");
  p.graph.alpha = get_double("alpha");
  p.graph.beta = get_double("beta");
  p.graph.max_degree = static_cast<int>(get_int("dmax"));
  p.window_us = static_cast<std::int64_t>(get_double("window_ms") * 1000.0 + 0.5);
  p.augment = get_bool("augment");
  return p;
}

TrainConfig RunConfig::training() const {
  TrainConfig t;
  t.epochs = static_cast<int>(get_int("epochs"));
  t.batch_size = static_cast<int>(get_int("batch"));
  t.lr = get_double("lr");
  t.decay_factor = get_double("decay_factor");
  t.seed = get_u64("seed");
  t.workers = workers();
  t.decay_epochs.clear();
  std::istringstream ss(get("decay_epochs"));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    int v = 0;
    auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    require(ec == std::errc() && p == item.data() + item.size() && v >= 0, "decay_epochs",
            "expected a comma-separated list of epochs, got '" + get("decay_epochs") + "'");
    t.decay_epochs.push_back(v);
  }
  return t;
}

SynthParams RunConfig::synth() const {
  SynthParams s;
  s.duration_us = static_cast<std::int64_t>(get_double("synth_duration_ms") * 1000.0 + 0.5);
  s.width = static_cast<int>(get_int("width"));
  s.height = static_cast<int>(get_int("height"));
  s.rate = get_double("synth_rate");
  s.noise_fraction = get_double("synth_noise");
  return s;
}

ModelSpec RunConfig::model(int num_classes, int grid_w, int grid_h) const {
  std::vector<ClusterSize> clusters;
  if (is_set("clusters")) clusters = parse_cluster_list(get("clusters"));
  ModelSpec spec = build_model(get("preset"), num_classes, grid_w, grid_h, clusters);
  spec.degree = static_cast<int>(get_int("degree"));
  spec.kernel = static_cast<int>(get_int("kernel"));
  spec.two_conv_residual = get_bool("two_conv_residual");
  spec.self_loops = get_bool("self_loops");
  spec.dropout = get_double("dropout");
  spec.validate();
  return spec;
}

int RunConfig::workers() const {
  return get_bool("deterministic") ? 1 : static_cast<int>(get_int("workers"));
}

}  // namespace evg
