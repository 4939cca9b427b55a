#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "evgraph/events.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/network.hpp"
#include "evgraph/sampling.hpp"

namespace evg {

struct Sample {
  EventStream stream;
  int label = 0;
  std::uint64_t id = 0;  ///< stable identity; per-sample seeds derive from it
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
  int num_classes = 0;
  int width = 0;
  int height = 0;
};

/// `per_class` synthetic streams for each of `classes` shapes; sample i of class c uses seed derive(seed, c, i).
std::vector<Sample> make_synthetic_samples(int classes, int per_class, std::uint64_t seed, const SynthParams& base);

/// Random split holding out round(test_fraction * n) samples for testing.
Dataset split_dataset(std::vector<Sample> samples, double test_fraction, std::uint64_t seed);

/// Dataset directory: "index.tsv" with lines "<relative path>\t<label>[\t<train|test>]" and
/// one portable event file per sample.
void write_dataset(const std::filesystem::path& dir, std::span<const Sample> samples);
/// Loads a dataset directory; entries without a split column are split at random with `split_seed`.
Dataset load_dataset(const std::filesystem::path& dir, std::uint64_t split_seed, double test_fraction = 0.2);
/// Loads the public N-MNIST layout (Train/<digit>/*.bin, Test/<digit>/*.bin), keeping at most
/// `max_train` / `max_test` files chosen at random with `seed` (0 = all).
Dataset load_nmnist(const std::filesystem::path& dir, std::size_t max_train, std::size_t max_test, std::uint64_t seed);

/// Event stream -> graph preprocessing.
struct PipelineConfig {
  SamplingConfig sampling;
  GraphConfig graph;
  std::int64_t window_us = 30'000;
  bool augment = true;
  AugmentConfig augmentation;

  std::string describe() const;
};

/// Training: one randomly positioned window, sampling, graph, augmentation.
/// Evaluation: the window starting at t = 0, no augmentation. If the chosen
/// window holds no events, the window starting at the first event is used.
EventGraph prepare_sample(const Sample& sample, const PipelineConfig& cfg, bool train, std::uint64_t seed, int epoch);

/// Runs fn(i) for i in [0, n) on `workers` threads. Results must be written to per-index slots.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Adam with bias correction over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<ad::Parameter*> params, AdamConfig cfg = {});
  /// One update from the gradients currently stored in the parameters.
  void step(double lr);
  std::int64_t steps() const noexcept { return steps_; }
  const std::vector<ad::Tensor>& first_moment() const noexcept { return m_; }
  const std::vector<ad::Tensor>& second_moment() const noexcept { return v_; }

 private:
  std::vector<ad::Parameter*> params_;
  AdamConfig cfg_;
  std::vector<ad::Tensor> m_;
  std::vector<ad::Tensor> v_;
  std::int64_t steps_ = 0;
};

/// Learning rate for 1-based `epoch`: base * factor^(number of decay epochs already completed).
double learning_rate(int epoch, double base, std::span<const int> decay_epochs, double factor);

struct TrainConfig {
  int epochs = 150;
  int batch_size = 64;
  double lr = 1e-3;
  std::vector<int> decay_epochs{60, 110};
  double decay_factor = 0.1;
  AdamConfig adam;
  std::uint64_t seed = 0;
  int workers = 1;

  std::string describe() const;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<EpochMetrics> epochs;
  std::string config_hash;
  std::uint64_t seed = 0;
  double final_test_accuracy = 0.0;
  double seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

/// Mini-batch training with Adam; evaluates on `data.test` after every epoch.
/// Throws NumericError when the loss becomes non-finite.
TrainReport train(Network& net, const Dataset& data, const TrainConfig& cfg, const PipelineConfig& pipeline,
                  const EpochCallback& on_epoch = {});

struct EvalResult {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<int> predictions;  ///< in input order
};

EvalResult evaluate(Network& net, std::span<const Sample> samples, const PipelineConfig& pipeline, std::uint64_t seed,
                    int workers = 1, int batch_size = 64);

/// FNV-1a 64-bit hash of a configuration text, as 16 hex digits.
std::string config_hash(const std::string& text);

}  // namespace evg
