#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "evgraph/graph.hpp"
#include "evgraph/model_spec.hpp"

namespace evg::complexity {

struct GraphStats {
  std::uint64_t nodes = 0;
  std::uint64_t edges = 0;
  friend bool operator==(const GraphStats&, const GraphStats&) = default;
};

/// 2 H W (C_in K^2 + 1) C_out.
std::uint64_t conv2d_flops(std::uint64_t h, std::uint64_t w, std::uint64_t c_in, std::uint64_t k, std::uint64_t c_out);
/// N_edge (m+1)^d (3 C_in C_out + 7 d) + (N_edge + N_node) C_out.
std::uint64_t graph_conv_flops(const GraphStats& stats, std::uint64_t m, std::uint64_t d, std::uint64_t c_in,
                               std::uint64_t c_out);
/// (2 I - 1) O.
std::uint64_t fc_flops(std::uint64_t in, std::uint64_t out);
/// (C_in K_eff + 1) C_out where K_eff is the number of kernel elements (K^2, or k1 k2 for spline kernels).
std::uint64_t conv_params(std::uint64_t c_in, std::uint64_t k_eff, std::uint64_t c_out);
/// (C_in + 1) C_out.
std::uint64_t fc_params(std::uint64_t c_in, std::uint64_t c_out);

struct LayerReport {
  std::string name;
  std::uint64_t flops = 0;
  std::uint64_t params = 0;
};

struct FlopsReport {
  std::vector<LayerReport> layers;
  std::uint64_t total_flops = 0;
  std::uint64_t total_params = 0;

  double gflops() const { return static_cast<double>(total_flops) / 1e9; }
  /// Parameter storage at 4 bytes per parameter, in MiB.
  double megabytes() const { return static_cast<double>(total_params) * 4.0 / (1024.0 * 1024.0); }
};

/// Per-layer FLOPs and parameters. `stats` holds one entry per Conv/Res layer,
/// describing the graph that layer convolves. Res blocks include their 1x1
/// shortcut; batch normalisation and pooling are not counted.
FlopsReport model_report(const ModelSpec& spec, std::span<const GraphStats> stats);

/// Average node/edge counts (rounded to the nearest integer) seen by every
/// Conv/Res layer when `graphs` are pushed through the model's pooling chain.
std::vector<GraphStats> measure_graph_stats(const ModelSpec& spec, std::span<const EventGraph> graphs);

}  // namespace evg::complexity
