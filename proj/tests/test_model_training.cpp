#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "evgraph/errors.hpp"
#include "evgraph/model_spec.hpp"
#include "evgraph/network.hpp"
#include "evgraph/training.hpp"
#include "support/gradcheck.hpp"

using namespace evg;
namespace fs = std::filesystem;

namespace {

SynthParams small_synth() {
  SynthParams p;
  p.width = 34;
  p.height = 34;
  p.duration_us = 60'000;
  return p;
}

PipelineConfig fast_pipeline(bool augment = false) {
  PipelineConfig c;
  c.sampling.k = 8;
  c.augment = augment;
  return c;
}

std::vector<EventGraph> graphs_of(const std::vector<Sample>& samples, const PipelineConfig& pipe) {
  std::vector<EventGraph> out;
  for (const auto& s : samples) out.push_back(prepare_sample(s, pipe, false, 0, 0));
  return out;
}

double batch_loss(Network& net, const GraphBatch& batch, bool train) {
  ad::Tape tape;
  return ad::softmax_cross_entropy(net.forward(tape, batch, train, 1), batch.labels).value().item();
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("evg_mt_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("small residual preset on a 34x34 sensor") {
  auto spec = build_model("rgcnn_small", 10, 34, 34);
  CHECK_NOTHROW(spec.validate());
  auto chain = spec.grid_chain();
  REQUIRE(chain.size() == 3);
  CHECK(chain[0].grid_w == 34);
  CHECK(chain[0].out_w() == 17);
  CHECK(chain[1].out_w() == 5);
  CHECK(chain[2].out_w() == 1);
  CHECK(chain[2].out_h() == 1);
  CHECK(spec.final_nodes() == 1);
  CHECK(spec.residual_blocks() == 2);
  std::vector<LayerKind> kinds;
  for (const auto& l : spec.layers) kinds.push_back(l.kind);
  CHECK(kinds == std::vector<LayerKind>{LayerKind::Conv, LayerKind::MaxPool, LayerKind::Res, LayerKind::MaxPool,
                                        LayerKind::Res, LayerKind::MaxPool, LayerKind::FC, LayerKind::FC});
  CHECK(spec.layers[6].in == 128);
  CHECK(spec.layers[6].out == 128);
  CHECK(spec.layers[7].out == 10);
}

TEST_CASE("plain presets carry no shortcut parameters") {
  for (const auto* preset : {"gcnn_small", "gcnn_large"}) {
    Network net(build_model(preset, 4, 34, 34), 0);
    for (auto* p : net.parameters()) CHECK(p->name.find("shortcut") == std::string::npos);
  }
  Network res(build_model("rgcnn_small", 4, 34, 34), 0);
  std::size_t shortcuts = 0;
  for (auto* p : res.parameters()) shortcuts += p->name.find("shortcut") != std::string::npos;
  CHECK(shortcuts > 0);
}

TEST_CASE("model description round trip and validation") {
  for (const auto& preset : kPresets) {
    auto spec = build_model(preset, 7, 40, 30);
    spec.degree = 2;
    spec.two_conv_residual = true;
    CHECK(ModelSpec::from_config(spec.to_config()) == spec);
  }
  auto bad = build_model("gcnn_small", 3, 34, 34);
  bad.layers[2].in = 31;
  CHECK_THROWS_AS(bad.validate(), ShapeError);
  CHECK_THROWS(build_model("nope", 3, 34, 34));
  CHECK(parse_cluster_list("4x3,16x12") == std::vector<ClusterSize>{{4, 3}, {16, 12}});
  CHECK(format_cluster_list({{4, 3}, {16, 12}}) == "4x3,16x12");
}

TEST_CASE("adam update") {
  ad::Parameter p("p", ad::Tensor({3}, std::vector<double>{1.0, -2.0, 0.5}));
  Adam adam({&p});
  p.grad = ad::Tensor({3}, std::vector<double>{0.3, -4.0, 0.0});
  adam.step(1e-3);
  CHECK(p.value[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-7));
  CHECK(p.value[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-7));
  CHECK(p.value[2] == 0.5);
  CHECK(adam.steps() == 1);

  ad::Parameter q("q", ad::Tensor({2}, 3.0));
  Adam idle({&q});
  for (int i = 0; i < 5; ++i) idle.step(1e-2);
  CHECK(q.value[0] == 3.0);
  CHECK(q.value[1] == 3.0);
}

TEST_CASE("learning rate schedule") {
  std::vector<int> decay{60, 110};
  CHECK(learning_rate(1, 1e-3, decay, 0.1) == doctest::Approx(1e-3));
  CHECK(learning_rate(60, 1e-3, decay, 0.1) == doctest::Approx(1e-3));
  CHECK(learning_rate(61, 1e-3, decay, 0.1) == doctest::Approx(1e-4));
  CHECK(learning_rate(110, 1e-3, decay, 0.1) == doctest::Approx(1e-4));
  CHECK(learning_rate(111, 1e-3, decay, 0.1) == doctest::Approx(1e-5));
  CHECK(learning_rate(150, 1e-3, {}, 0.1) == doctest::Approx(1e-3));
}

TEST_CASE("config hash is 64-bit FNV-1a") {
  CHECK(config_hash("") == "cbf29ce484222325");
  CHECK(config_hash("a") == "af63dc4c8601ec8c");
  CHECK(config_hash("seed = 1") != config_hash("seed = 2"));
}

TEST_CASE("initial loss is close to ln Q") {
  auto samples = make_synthetic_samples(5, 4, 3, small_synth());
  auto graphs = graphs_of(samples, fast_pipeline());
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  auto batch = batch_graphs(graphs, labels);
  for (int q : {5}) {
    Network net(build_model("rgcnn_small", q, 34, 34), 11);
    const double loss = batch_loss(net, batch, false);
    CHECK(std::fabs(loss - std::log(double(q))) < 0.35 * std::log(double(q)));
  }
}

TEST_CASE("dataset directory round trip and splitting") {
  auto samples = make_synthetic_samples(3, 5, 7, small_synth());
  REQUIRE(samples.size() == 15);
  auto again = make_synthetic_samples(3, 5, 7, small_synth());
  for (std::size_t i = 0; i < samples.size(); ++i) CHECK(samples[i].stream == again[i].stream);

  auto split = split_dataset(samples, 0.2, 9);
  CHECK(split.test.size() == 3);
  CHECK(split.train.size() == 12);
  auto split2 = split_dataset(samples, 0.2, 9);
  for (std::size_t i = 0; i < 3; ++i) CHECK(split.test[i].id == split2.test[i].id);

  auto dir = temp_dir("ds");
  write_dataset(dir, samples);
  auto loaded = load_dataset(dir, 9, 0.2);
  REQUIRE(loaded.train.size() + loaded.test.size() == 15);
  CHECK(loaded.num_classes == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(loaded.test[i].stream == split.test[i].stream);

  {
    std::ofstream idx(dir / "index.tsv");
    idx << "samples/000000.evt\t0\ttest\nsamples/000001.evt\t0\ttrain\n";
  }
  auto fixed = load_dataset(dir, 1);
  CHECK(fixed.train.size() == 1);
  CHECK(fixed.test.size() == 1);
  {
    std::ofstream idx(dir / "index.tsv");
    idx << "samples/missing.evt\t0\n";
  }
  CHECK_THROWS(load_dataset(dir, 1));
  CHECK_THROWS(load_dataset(dir / "absent", 1));
  fs::remove_all(dir);
}

TEST_CASE("N-MNIST directory layout") {
  auto dir = temp_dir("nmnist");
  auto samples = make_synthetic_samples(2, 3, 4, small_synth());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto split = i % 3 == 2 ? "Test" : "Train";
    const auto sub = dir / split / std::to_string(samples[i].label + 3);
    fs::create_directories(sub);
    const auto bytes = encode_nmnist_bin(samples[i].stream);
    std::ofstream f(sub / (std::to_string(i) + ".bin"), std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
  fs::create_directories(dir / "Train" / "9");
  std::ofstream(dir / "Train" / "9" / "readme.txt") << "ignored\n";

  auto all = load_nmnist(dir, 0, 0, 1);
  CHECK(all.num_classes == 10);
  CHECK(all.width == 34);
  REQUIRE(all.train.size() == 4);
  REQUIRE(all.test.size() == 2);
  CHECK(all.train[0].label == 3);
  CHECK(all.test.back().label == 4);
  CHECK(all.test[0].id != all.train[0].id);

  auto capped = load_nmnist(dir, 2, 1, 1);
  CHECK(capped.train.size() == 2);
  CHECK(capped.test.size() == 1);
  auto again = load_nmnist(dir, 2, 1, 1);
  CHECK(capped.train[0].id == again.train[0].id);
  CHECK(capped.train[1].stream == again.train[1].stream);

  CHECK_THROWS_AS(load_nmnist(dir / "Test", 0, 0, 1), DataError);
  fs::remove_all(dir);
}

TEST_CASE("sample preparation") {
  auto samples = make_synthetic_samples(1, 1, 5, small_synth());
  auto pipe = fast_pipeline(true);
  auto a = prepare_sample(samples[0], pipe, true, 3, 1);
  auto b = prepare_sample(samples[0], pipe, true, 3, 1);
  CHECK(a == b);
  auto c = prepare_sample(samples[0], pipe, true, 3, 2);
  CHECK_FALSE(a == c);
  auto e1 = prepare_sample(samples[0], pipe, false, 3, 1);
  auto e2 = prepare_sample(samples[0], pipe, false, 99, 7);
  CHECK(e1.num_nodes() > 0);
  for (const auto& p : e1.pos) CHECK(p.t < pipe.window_us);
  CHECK(e1.num_nodes() == e2.num_nodes());

  Sample late = samples[0];
  std::vector<Event> shifted(late.stream.begin(), late.stream.end());
  for (auto& ev : shifted) ev.t += 500'000;
  late.stream = EventStream(34, 34, shifted);
  auto g = prepare_sample(late, pipe, false, 0, 0);
  CHECK(g.num_nodes() > 0);
}

TEST_CASE("parallel_for") {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
  CHECK_THROWS_AS(parallel_for(10, 3, [](std::size_t i) {
    if (i == 7) throw DataError("boom");
  }), DataError);
}

TEST_CASE("separable two-class set is learned") {
  // same geometry, all-ON versus all-OFF polarity
  auto base = make_synthetic_samples(3, 4, 21, small_synth());
  std::vector<Sample> samples;
  for (int label = 0; label < 2; ++label) {
    for (const auto& s : base) {
      std::vector<Event> ev(s.stream.begin(), s.stream.end());
      for (auto& e : ev) e.p = label == 0 ? 1 : -1;
      samples.push_back({EventStream(34, 34, ev), label, samples.size()});
    }
  }
  Dataset data;
  data.train = samples;
  data.num_classes = 2;
  auto spec = shrink_model(build_model("gcnn_small", 2, 34, 34), 8, 16);
  spec.dropout = 0.0;
  Network net(spec, 1);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.lr = 1e-2;
  cfg.decay_epochs = {};
  double best = 0.0;
  auto report = train(net, data, cfg, fast_pipeline(), [&](const EpochMetrics& m) { best = std::max(best, m.train_accuracy); });
  CHECK(report.epochs.size() == 10);
  CHECK(best == 1.0);
}

TEST_CASE("evaluation is invariant to sample order") {
  auto samples = make_synthetic_samples(3, 4, 2, small_synth());
  auto spec = shrink_model(build_model("rgcnn_small", 3, 34, 34), 4, 8);
  Network net(spec, 4);
  auto r1 = evaluate(net, samples, fast_pipeline(), 0, 1, 5);
  std::vector<std::size_t> perm(samples.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(3);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<Sample> shuffled;
  for (auto i : perm) shuffled.push_back(samples[i]);
  auto r2 = evaluate(net, shuffled, fast_pipeline(), 0, 2, 7);
  for (std::size_t i = 0; i < perm.size(); ++i) CHECK(r2.predictions[i] == r1.predictions[perm[i]]);
  CHECK(r1.correct == r2.correct);
}

TEST_CASE("zero learning rate leaves the weights unchanged") {
  auto samples = make_synthetic_samples(2, 3, 8, small_synth());
  Dataset data;
  data.train = samples;
  data.num_classes = 2;
  Network net(shrink_model(build_model("rgcnn_small", 2, 34, 34), 4, 8), 2);
  std::vector<ad::Tensor> before;
  for (auto* p : net.parameters()) before.push_back(p->value);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.lr = 0.0;
  train(net, data, cfg, fast_pipeline(true));
  auto params = net.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i]->value == before[i]);
}

TEST_CASE("full-batch descent does not increase the loss") {
  auto samples = make_synthetic_samples(3, 4, 12, small_synth());
  auto graphs = graphs_of(samples, fast_pipeline());
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  auto batch = batch_graphs(graphs, labels);
  auto spec = shrink_model(build_model("rgcnn_small", 3, 34, 34), 8, 16);
  spec.dropout = 0.0;
  Network net(spec, 6);
  Adam adam(net.parameters());
  double prev = batch_loss(net, batch, true);
  for (int step = 0; step < 15; ++step) {
    net.zero_grad();
    {
      ad::Tape tape;
      auto loss = ad::softmax_cross_entropy(net.forward(tape, batch, true), batch.labels);
      tape.backward(loss);
    }
    adam.step(1e-4);
    const double now = batch_loss(net, batch, true);
    CAPTURE(step);
    CHECK(now <= prev + 1e-9);
    prev = now;
  }
}

TEST_CASE("end-to-end gradients of every preset at tiny width") {
  for (const auto& preset : kPresets) {
    const bool large = preset.find("large") != std::string::npos;
    auto synth = small_synth();
    if (large) {
      synth.width = 240;
      synth.height = 180;
    }
    auto samples = make_synthetic_samples(2, 2, 4, synth);
    auto pipe = fast_pipeline();
    pipe.sampling.k = large ? 4 : 3;
    auto graphs = graphs_of(samples, pipe);
    std::vector<int> labels{0, 0, 1, 1};
    auto batch = batch_graphs(graphs, labels);
    auto spec = shrink_model(build_model(preset, 2, synth.width, synth.height), 2, 3);
    spec.dropout = 0.0;
    // the large chain reaches a 1x1 grid before its last conv; self-loops keep that layer input-dependent
    spec.self_loops = large;
    Network net(spec, 8);
    // move zero-initialised offsets off the ReLU kink
    Rng jitter(5);
    for (auto* p : net.parameters()) {
      if (p->name.ends_with("bias") || p->name.ends_with("beta")) {
        for (auto& v : p->value.data()) v = uniform(jitter, -0.5, 0.5);
      }
    }
    auto res = gradcheck::check(net.parameters(), [&](ad::Tape& t) {
      return ad::softmax_cross_entropy(net.forward(t, batch, true), batch.labels);
    }, 1e-5);
    CAPTURE(preset);
    CAPTURE(batch.graph.num_nodes());
    CHECK(res.checked == net.parameter_count());
    CHECK(res.max_rel < 1e-4);
    double first = 0.0;
    for (double g : net.parameters().front()->grad.data()) first = std::max(first, std::fabs(g));
    CHECK(first > 1e-8);
  }
}

TEST_CASE("non-finite loss is reported") {
  auto samples = make_synthetic_samples(2, 2, 8, small_synth());
  Dataset data;
  data.train = samples;
  data.num_classes = 2;
  Network net(shrink_model(build_model("gcnn_small", 2, 34, 34), 4, 8), 2);
  net.parameters().back()->value[0] = std::nan("");
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 4;
  try {
    train(net, data, cfg, fast_pipeline());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("epoch 1") != std::string::npos);
    CHECK(msg.find(std::to_string(samples[0].id)) != std::string::npos);
  }
}
