#include "evgraph/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "evgraph/errors.hpp"
#include "evgraph/random.hpp"

namespace evg {

namespace {

enum SeedPurpose : std::uint64_t {
  kWindow = 1,
  kSampling = 2,
  kAugment = 3,
  kShuffle = 4,
  kDropout = 5,
  kSplit = 6,
  kInit = 7,
  kSubset = 8,
};

}  // namespace

// --- datasets ---------------------------------------------------------------------------

std::vector<Sample> make_synthetic_samples(int classes, int per_class, std::uint64_t seed, const SynthParams& base) {
  if (classes < 1 || per_class < 1) throw ConfigError("synthetic dataset needs classes >= 1 and per-class >= 1");
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(classes) * per_class);
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      SynthParams p = base;
      p.class_id = c;
      p.seed = derive_seed(seed, {static_cast<std::uint64_t>(c), static_cast<std::uint64_t>(i)});
      out.push_back(Sample{synth_moving_shape(p), c, static_cast<std::uint64_t>(out.size())});
    }
  }
  return out;
}

Dataset split_dataset(std::vector<Sample> samples, double test_fraction, std::uint64_t seed) {
  if (samples.empty()) throw DataError("empty dataset");
  Dataset d;
  d.width = samples[0].stream.width();
  d.height = samples[0].stream.height();
  for (const auto& s : samples) d.num_classes = std::max(d.num_classes, s.label + 1);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, {kSplit}));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(samples.size())));
  std::vector<bool> is_test(samples.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  for (std::size_t i = 0; i < samples.size(); ++i) (is_test[i] ? d.test : d.train).push_back(std::move(samples[i]));
  return d;
}

void write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples) {
  std::filesystem::create_directories(dir / "samples");
  std::ofstream index(dir / "index.tsv");
  if (!index) throw DataError("cannot write " + (dir / "index.tsv").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char name[64];
    std::snprintf(name, sizeof(name), "samples/%06zu.evt", i);
    write_portable(samples[i].stream, dir / name);
    index << name << '\t' << samples[i].label << '\n';
  }
}

Dataset load_dataset(const std::filesystem::path& dir, std::uint64_t split_seed, double test_fraction) {
  std::ifstream index(dir / "index.tsv");
  if (!index) throw DataError("dataset index " + (dir / "index.tsv").string() + " not found");
  std::vector<Sample> unsplit;
  Dataset d;
  std::string line;
  std::size_t lineno = 0;
  std::uint64_t next_id = 0;
  while (std::getline(index, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::string path, split;
    int label = -1;
    if (!std::getline(ss, path, '\t') || !(ss >> label) || label < 0) {
      throw ParseError("dataset index: expected \"path<TAB>label[<TAB>split]\"", lineno);
    }
    ss >> split;
    Sample s{read_portable(dir / path), label, next_id++};
    d.num_classes = std::max(d.num_classes, label + 1);
    if (split == "train") {
      d.train.push_back(std::move(s));
    } else if (split == "test") {
      d.test.push_back(std::move(s));
    } else if (split.empty()) {
      unsplit.push_back(std::move(s));
    } else {
      throw ParseError("dataset index: unknown split '" + split + "'", lineno);
    }
  }
  if (!unsplit.empty()) {
    auto extra = split_dataset(std::move(unsplit), test_fraction, split_seed);
    for (auto& s : extra.train) d.train.push_back(std::move(s));
    for (auto& s : extra.test) d.test.push_back(std::move(s));
  }
  if (d.train.empty() && d.test.empty()) throw DataError("dataset " + dir.string() + " is empty");
  const auto& first = d.train.empty() ? d.test.front() : d.train.front();
  d.width = first.stream.width();
  d.height = first.stream.height();
  return d;
}

Dataset load_nmnist(const std::filesystem::path& dir, std::size_t max_train, std::size_t max_test, std::uint64_t seed) {
  namespace fs = std::filesystem;
  auto collect = [&](const std::string& split, std::size_t limit, std::uint64_t id_base) {
    std::vector<std::pair<fs::path, int>> files;
    for (int digit = 0; digit < 10; ++digit) {
      const fs::path sub = dir / split / std::to_string(digit);
      if (!fs::is_directory(sub)) continue;
      for (const auto& entry : fs::directory_iterator(sub)) {
        if (entry.path().extension() == ".bin") files.emplace_back(entry.path(), digit);
      }
    }
    std::sort(files.begin(), files.end());
    if (limit > 0 && files.size() > limit) {
      Rng rng(derive_seed(seed, {kSubset, id_base}));
      for (std::size_t i = files.size(); i > 1; --i) std::swap(files[i - 1], files[uniform_index(rng, i)]);
      files.resize(limit);
      std::sort(files.begin(), files.end());
    }
    std::vector<Sample> out;
    for (std::size_t i = 0; i < files.size(); ++i) {
      out.push_back(Sample{read_nmnist_file(files[i].first), files[i].second, id_base + i});
    }
    return out;
  };
  Dataset d;
  d.train = collect("Train", max_train, 0);
  d.test = collect("Test", max_test, 1ULL << 40);
  if (d.train.empty()) throw DataError("no N-MNIST training files under " + dir.string());
  d.num_classes = 10;
  d.width = kNmnistSize;
  d.height = kNmnistSize;
  return d;
}

// --- preprocessing ------------------------------------------------------------------------

std::string PipelineConfig::describe() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "k=" << sampling.k << "\nmin_cell_xy=" << sampling.min_cell_xy << "\nmin_cell_t=" << sampling.min_cell_t
     << "\nradius=" << graph.radius << "\nalpha=" << graph.alpha << "\nbeta=" << graph.beta
     << "\ndmax=" << graph.max_degree << "\nwindow_us=" << window_us << "\naugment=" << (augment ? 1 : 0)
     << "\nscale_min=" << augmentation.scale_min << "\nscale_max=" << augmentation.scale_max
     << "\nflip_probability=" << augmentation.flip_probability
     << "\nmax_rotation_deg=" << augmentation.max_rotation_deg << '\n';
  return ss.str();
}

EventGraph prepare_sample(const Sample& sample, const PipelineConfig& cfg, bool train, std::uint64_t seed, int epoch) {
  const auto& s = sample.stream;
  if (s.empty()) throw DataError("sample " + std::to_string(sample.id) + " has no events");
  const auto ep = static_cast<std::uint64_t>(train ? epoch : -1);
  std::int64_t start = 0;
  if (train) {
    const std::int64_t first = s[0].t;
    const std::int64_t last_start = std::max(first, s[s.size() - 1].t - cfg.window_us + 1);
    Rng rng(derive_seed(seed, {kWindow, ep, sample.id}));
    start = first + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(last_start - first + 1)));
  }
  EventStream window = extract_window(s, start, cfg.window_us);
  if (window.empty()) window = extract_window(s, s[0].t, cfg.window_us);

  SamplingConfig sc = cfg.sampling;
  sc.seed = derive_seed(seed, {kSampling, ep, sample.id});
  EventGraph g = build_radius_graph(nonuniform_sample(window, sc), cfg.graph);
  if (train && cfg.augment) {
    Rng rng(derive_seed(seed, {kAugment, ep, sample.id}));
    g = augment_random(g, rng, cfg.augmentation);
  }
  return g;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const auto w = static_cast<std::size_t>(std::max(1, workers));
  if (w == 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  std::vector<std::thread> threads;
  for (std::size_t k = 0; k < w; ++k) {
    threads.emplace_back([&, k] {
      try {
        for (std::size_t i = k; i < n; i += w) fn(i);
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

// --- optimisation -------------------------------------------------------------------------

Adam::Adam(std::vector<ad::Parameter*> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void Adam::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    if (p.grad.size() != p.value.size()) p.zero_grad();
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i] + cfg_.weight_decay * p.value[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p.value[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

double learning_rate(int epoch, double base, std::span<const int> decay_epochs, double factor) {
  double lr = base;
  for (int d : decay_epochs) {
    if (epoch > d) lr *= factor;
  }
  return lr;
}

std::string TrainConfig::describe() const {
  std::ostringstream ss;
  ss.precision(17);
  ss << "epochs=" << epochs << "\nbatch=" << batch_size << "\nlr=" << lr << "\ndecay_epochs=";
  for (std::size_t i = 0; i < decay_epochs.size(); ++i) ss << (i ? "," : "") << decay_epochs[i];
  ss << "\ndecay_factor=" << decay_factor << "\nadam_beta1=" << adam.beta1 << "\nadam_beta2=" << adam.beta2
     << "\nadam_eps=" << adam.eps << "\nweight_decay=" << adam.weight_decay << "\nseed=" << seed << '\n';
  return ss.str();
}

std::string config_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

std::vector<EventGraph> prepare_batch(std::span<const Sample* const> samples, const PipelineConfig& cfg, bool train,
                                      std::uint64_t seed, int epoch, int workers) {
  std::vector<EventGraph> graphs(samples.size());
  parallel_for(samples.size(), workers,
               [&](std::size_t i) { graphs[i] = prepare_sample(*samples[i], cfg, train, seed, epoch); });
  return graphs;
}

int argmax_row(const ad::Tensor& logits, std::size_t row) {
  const std::size_t q = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t c = 1; c < q; ++c) {
    if (logits.at(row, c) > logits.at(row, best)) best = c;
  }
  return static_cast<int>(best);
}

std::string diagnostic_dump(Network& net) {
  std::ostringstream ss;
  for (auto* p : net.parameters()) {
    double norm = 0.0;
    double gnorm = 0.0;
    for (double v : p->value.data()) norm += v * v;
    for (double v : p->grad.data()) gnorm += v * v;
    ss << "\n  " << p->name << " |w|=" << std::sqrt(norm) << " |g|=" << std::sqrt(gnorm);
  }
  return ss.str();
}

}  // namespace

EvalResult evaluate(Network& net, std::span<const Sample> samples, const PipelineConfig& pipeline, std::uint64_t seed,
                    int workers, int batch_size) {
  EvalResult r;
  r.total = samples.size();
  const auto bs = static_cast<std::size_t>(std::max(1, batch_size));
  for (std::size_t b0 = 0; b0 < samples.size(); b0 += bs) {
    const std::size_t b1 = std::min(samples.size(), b0 + bs);
    std::vector<const Sample*> chunk;
    std::vector<int> labels;
    for (std::size_t i = b0; i < b1; ++i) {
      chunk.push_back(&samples[i]);
      labels.push_back(samples[i].label);
    }
    auto graphs = prepare_batch(chunk, pipeline, false, seed, 0, workers);
    auto batch = batch_graphs(graphs, labels);
    ad::Tape tape;
    auto logits = net.forward(tape, batch, false);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int pred = argmax_row(logits.value(), i);
      r.predictions.push_back(pred);
      r.correct += pred == labels[i];
    }
  }
  r.accuracy = r.total ? static_cast<double>(r.correct) / static_cast<double>(r.total) : 0.0;
  return r;
}

TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg, const PipelineConfig& pipeline,
                  const EpochCallback& on_epoch) {
  if (data.train.empty()) throw DataError("training set is empty");
  if (cfg.epochs < 1 || cfg.batch_size < 1) throw ConfigError("epochs and batch must be >= 1");
  using clock = std::chrono::steady_clock;
  const auto t_start = clock::now();

  TrainReport report;
  report.seed = cfg.seed;
  report.config_hash = config_hash(net.spec().to_config() + cfg.describe() + pipeline.describe());
  Adam adam(net.parameters(), cfg.adam);
  const auto n = data.train.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t_epoch = clock::now();
    const double lr = learning_rate(epoch, cfg.lr, cfg.decay_epochs, cfg.decay_factor);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {kShuffle, static_cast<std::uint64_t>(epoch)}));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += bs, ++batch_index) {
      const std::size_t b1 = std::min(n, b0 + bs);
      std::vector<const Sample*> chunk;
      std::vector<int> labels;
      for (std::size_t i = b0; i < b1; ++i) {
        chunk.push_back(&data.train[order[i]]);
        labels.push_back(data.train[order[i]].label);
      }
      auto graphs = prepare_batch(chunk, pipeline, true, cfg.seed, epoch, cfg.workers);
      auto batch = batch_graphs(graphs, labels);

      ad::Tape tape;
      const auto drop_seed = derive_seed(cfg.seed, {kDropout, static_cast<std::uint64_t>(epoch), batch_index});
      auto logits = net.forward(tape, batch, true, drop_seed);
      auto loss = ad::softmax_cross_entropy(logits, labels);
      const double loss_value = loss.value().item();
      if (!std::isfinite(loss_value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << "; samples";
        for (const auto* s : chunk) msg << ' ' << s->id;
        msg << diagnostic_dump(net);
        throw NumericError(msg.str());
      }
      net.zero_grad();
      tape.backward(loss);
      adam.step(lr);

      loss_sum += loss_value * static_cast<double>(chunk.size());
      for (std::size_t i = 0; i < chunk.size(); ++i) correct += argmax_row(logits.value(), i) == labels[i];
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!data.test.empty()) m.test_accuracy = evaluate(net, data.test, pipeline, cfg.seed, cfg.workers, cfg.batch_size).accuracy;
    m.seconds = std::chrono::duration<double>(clock::now() - t_epoch).count();
    report.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  report.final_test_accuracy = report.epochs.back().test_accuracy;
  report.seconds = std::chrono::duration<double>(clock::now() - t_start).count();
  return report;
}

}  // namespace evg
