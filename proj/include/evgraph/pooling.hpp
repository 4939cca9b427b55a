#pragma once

#include <cstdint>
#include <vector>

#include "evgraph/autodiff.hpp"
#include "evgraph/graph.hpp"

namespace evg::nn {

enum class PoolMode { Max, Avg };

/// Fixed-size spatial clustering of a graph whose node (x, y) lie in a
/// grid_w x grid_h extent. Produces ceil(grid_w / cluster_w) x
/// ceil(grid_h / cluster_h) clusters per graph.
struct PoolSpec {
  int cluster_w = 2;
  int cluster_h = 2;
  PoolMode mode = PoolMode::Max;
  int grid_w = 0;
  int grid_h = 0;
  /// Express output coordinates in cluster units, so the next stage pools
  /// over the coarsened grid (the layer stack of a model chains grids this way).
  bool to_cluster_units = false;

  int clusters_x() const { return (grid_w + cluster_w - 1) / cluster_w; }
  int clusters_y() const { return (grid_h + cluster_h - 1) / cluster_h; }
  std::size_t clusters_per_graph() const {
    return static_cast<std::size_t>(clusters_x()) * static_cast<std::size_t>(clusters_y());
  }
  void validate() const;
};

/// Node geometry and connectivity of a (batched) graph, without features.
struct GraphStructure {
  std::vector<Point3> pos;
  std::vector<Edge> edges;
  std::vector<Pseudo> pseudo;
  std::vector<std::uint32_t> membership;  ///< node -> graph
  std::size_t num_graphs = 1;
  int grid_w = 0;
  int grid_h = 0;

  std::size_t num_nodes() const noexcept { return pos.size(); }
};

GraphStructure structure_of(const EventGraph& g);
GraphStructure structure_of(const GraphBatch& b);

/// Row-major cluster index of a position within its graph's cluster grid.
std::size_t cluster_cell(const Point3& p, const PoolSpec& spec);

struct PoolResult {
  GraphStructure coarse;
  std::vector<std::uint32_t> assignment;  ///< fine node -> coarse node
};

/// One coarse node per non-empty cluster, ordered by (graph, row-major cell).
/// Coordinates are member means; an edge A->B exists iff some member edge
/// crosses from A to B (duplicates merged, intra-cluster edges dropped).
PoolResult pool_structure(const GraphStructure& g, const PoolSpec& spec);

/// Channelwise max or mean of member features per coarse node.
ad::Var pool_features(ad::Var x, const PoolResult& pooled, PoolMode mode);

/// Pools and materialises every cluster of every graph: row (graph * P + cell),
/// empty cells are zero. Shape (num_graphs * P, C).
ad::Var pool_to_grid(ad::Var x, const GraphStructure& g, const PoolSpec& spec);

/// Graph-level pooling with features.
EventGraph graph_pool(const EventGraph& g, const PoolSpec& spec);

/// Materialises all P clusters of a final pooling stage in row-major order.
/// Empty clusters become zero-feature nodes at the cluster centre; nodes that
/// share a cluster are reduced with `spec.mode`.
EventGraph pad_to_grid(const EventGraph& g, const PoolSpec& spec);

}  // namespace evg::nn
