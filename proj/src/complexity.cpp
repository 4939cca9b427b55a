#include "evgraph/complexity.hpp"

#include <cmath>

#include "evgraph/errors.hpp"
#include "evgraph/pooling.hpp"

namespace evg::complexity {

std::uint64_t conv2d_flops(std::uint64_t h, std::uint64_t w, std::uint64_t c_in, std::uint64_t k, std::uint64_t c_out) {
  return 2 * h * w * (c_in * k * k + 1) * c_out;
}

std::uint64_t graph_conv_flops(const GraphStats& stats, std::uint64_t m, std::uint64_t d, std::uint64_t c_in,
                               std::uint64_t c_out) {
  std::uint64_t basis = 1;
  for (std::uint64_t i = 0; i < d; ++i) basis *= m + 1;
  return stats.edges * basis * (3 * c_in * c_out + 7 * d) + (stats.edges + stats.nodes) * c_out;
}

std::uint64_t fc_flops(std::uint64_t in, std::uint64_t out) { return in == 0 ? 0 : (2 * in - 1) * out; }

std::uint64_t conv_params(std::uint64_t c_in, std::uint64_t k_eff, std::uint64_t c_out) {
  return (c_in * k_eff + 1) * c_out;
}

std::uint64_t fc_params(std::uint64_t c_in, std::uint64_t c_out) { return (c_in + 1) * c_out; }

namespace {

constexpr std::uint64_t kDims = 2;

void add_layer(FlopsReport& r, std::string name, std::uint64_t flops, std::uint64_t params) {
  r.total_flops += flops;
  r.total_params += params;
  r.layers.push_back({std::move(name), flops, params});
}

}  // namespace

FlopsReport model_report(const ModelSpec& spec, std::span<const GraphStats> stats) {
  FlopsReport r;
  if (spec.layers.empty()) return r;
  const auto m = static_cast<std::uint64_t>(spec.degree);
  const auto k_eff = static_cast<std::uint64_t>(spec.kernel) * static_cast<std::uint64_t>(spec.kernel);
  std::size_t conv_index = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    const std::string name = std::to_string(i) + ":" + describe(l);
    const auto c_in = static_cast<std::uint64_t>(l.in);
    const auto c_out = static_cast<std::uint64_t>(l.out);
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Res: {
        if (conv_index >= stats.size()) throw DataError("missing graph statistics for layer " + name);
        GraphStats s = stats[conv_index++];
        if (spec.self_loops) s.edges += s.nodes;
        std::uint64_t flops = graph_conv_flops(s, m, kDims, c_in, c_out);
        std::uint64_t params = conv_params(c_in, k_eff, c_out);
        if (l.kind == LayerKind::Res) {
          if (spec.two_conv_residual) {
            flops += graph_conv_flops(s, m, kDims, c_out, c_out);
            params += conv_params(c_out, k_eff, c_out);
          }
          // the 1x1 shortcut has a single constant basis function
          flops += graph_conv_flops(s, 0, kDims, c_in, c_out);
          params += conv_params(c_in, 1, c_out);
        }
        add_layer(r, name, flops, params);
        break;
      }
      case LayerKind::FC:
        add_layer(r, name, fc_flops(c_in, c_out), fc_params(c_in, c_out));
        break;
      default:
        break;
    }
  }
  return r;
}

std::vector<GraphStats> measure_graph_stats(const ModelSpec& spec, std::span<const EventGraph> graphs) {
  std::size_t conv_layers = 0;
  for (const auto& l : spec.layers) conv_layers += l.kind == LayerKind::Conv || l.kind == LayerKind::Res;
  std::vector<double> nodes(conv_layers, 0.0);
  std::vector<double> edges(conv_layers, 0.0);
  for (const auto& g : graphs) {
    auto level = nn::structure_of(g);
    level.grid_w = spec.grid_w;
    level.grid_h = spec.grid_h;
    std::size_t c = 0;
    for (const auto& l : spec.layers) {
      if (l.kind == LayerKind::Conv || l.kind == LayerKind::Res) {
        nodes[c] += static_cast<double>(level.num_nodes());
        edges[c] += static_cast<double>(level.edges.size());
        ++c;
      } else if (l.kind == LayerKind::MaxPool || l.kind == LayerKind::AvgPool) {
        nn::PoolSpec ps;
        ps.cluster_w = l.cluster_w;
        ps.cluster_h = l.cluster_h;
        ps.grid_w = level.grid_w;
        ps.grid_h = level.grid_h;
        ps.to_cluster_units = true;
        level = nn::pool_structure(level, ps).coarse;
      }
    }
  }
  std::vector<GraphStats> out(conv_layers);
  const double n = graphs.empty() ? 1.0 : static_cast<double>(graphs.size());
  for (std::size_t c = 0; c < conv_layers; ++c) {
    out[c].nodes = static_cast<std::uint64_t>(std::llround(nodes[c] / n));
    out[c].edges = static_cast<std::uint64_t>(std::llround(edges[c] / n));
  }
  return out;
}

}  // namespace evg::complexity
