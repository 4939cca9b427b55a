#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "evgraph/autodiff.hpp"
#include "evgraph/graph.hpp"
#include "evgraph/layers.hpp"
#include "evgraph/model_spec.hpp"

namespace evg {

/// Named tensors plus the model description and the run configuration that produced them.
/// Binary layout: "EVGCKPT1", version (u32), model config, run config (u32 length + bytes),
/// tensor count (u32), then per tensor: name, rank (u32), dims (u64), values (f64), all little-endian.
struct Checkpoint {
  std::string model_config;
  std::string run_config;
  std::vector<std::pair<std::string, ad::Tensor>> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

void write_checkpoint(const Checkpoint& ckpt, std::ostream& out);
Checkpoint read_checkpoint(std::istream& in);
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// A ModelSpec instantiated with parameters.
class Network {
 public:
  Network(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const noexcept { return spec_; }

  /// Logits of shape (num_graphs x num_classes).
  ad::Var forward(ad::Tape& tape, const GraphBatch& batch, bool train, std::uint64_t dropout_seed = 0);

  std::vector<ad::Parameter*> parameters();
  std::size_t parameter_count();
  void zero_grad();

  Checkpoint checkpoint(const std::string& run_config) const;
  /// Copies tensors from a checkpoint; every name and shape must match.
  void load(const Checkpoint& ckpt);
  static Network from_checkpoint(const Checkpoint& ckpt);

 private:
  struct Slot {
    LayerSpec spec;
    std::unique_ptr<nn::ConvBlock> conv;
    std::unique_ptr<nn::ResidualBlock> res;
    std::unique_ptr<nn::Linear> fc;
  };

  std::vector<std::pair<std::string, ad::Tensor*>> named_tensors();
  std::vector<std::pair<std::string, const ad::Tensor*>> named_tensors() const;

  ModelSpec spec_;
  std::vector<Slot> slots_;
};

}  // namespace evg
