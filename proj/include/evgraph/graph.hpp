#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "evgraph/events.hpp"
#include "evgraph/random.hpp"

namespace evg {

/// Radius-graph construction parameters. Time differences enter in microseconds.
struct GraphConfig {
  double radius = 3.0;
  double alpha = 1.0;      ///< spatial weight
  double beta = 0.5e-5;    ///< temporal weight per us^2
  int max_degree = 32;

  void validate() const;
};

struct Point3 {
  double x = 0;
  double y = 0;
  double t = 0;

  friend bool operator==(const Point3&, const Point3&) = default;
};

struct Edge {
  std::uint32_t src = 0;
  std::uint32_t dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

using Pseudo = std::array<double, 2>;

/// Weighted spatio-temporal distance between two nodes.
double st_distance(const Point3& a, const Point3& b, const GraphConfig& cfg);

/// Directed spatio-temporal graph. Node features are stored row-major
/// (num_nodes x channels); `pseudo[e]` belongs to `edges[e]`.
struct EventGraph {
  int width = 0;
  int height = 0;
  std::vector<Point3> pos;
  int channels = 1;
  std::vector<double> features;
  std::vector<Edge> edges;
  std::vector<Pseudo> pseudo;

  std::size_t num_nodes() const noexcept { return pos.size(); }
  std::size_t num_edges() const noexcept { return edges.size(); }
  double feature(std::size_t node, int channel) const { return features[node * channels + channel]; }

  friend bool operator==(const EventGraph&, const EventGraph&) = default;
};

/// Pseudo-coordinates (|dx|, |dy|) of every edge, each component divided by its
/// maximum over the edges of the same graph. A component whose maximum is zero
/// maps to 0.5. `membership` may be empty (single graph).
std::vector<Pseudo> normalized_pseudo(std::span<const Point3> pos, std::span<const Edge> edges,
                                      std::span<const std::uint32_t> membership = {}, std::size_t num_graphs = 1);

/// Recomputes `g.pseudo` from the current node positions.
void refresh_pseudo(EventGraph& g);

/// One node per event, edge i->j when the weighted distance is <= radius, at
/// most `max_degree` out-edges per node (nearest first; ties by |dt|, then
/// index). Initial feature is the event polarity.
EventGraph build_radius_graph(const EventStream& stream, const GraphConfig& cfg);

// Geometric augmentation of node positions. The edge set is kept; pseudo
// coordinates are recomputed. Scale and rotation act about the sensor centre.
EventGraph augment_scale(const EventGraph& g, double factor);
EventGraph augment_mirror(const EventGraph& g, int axis);
EventGraph augment_rotate(const EventGraph& g, double degrees);

struct AugmentConfig {
  double scale_min = 0.95;
  double scale_max = 1.0;
  double flip_probability = 0.5;
  double max_rotation_deg = 10.0;
};

/// Random scale in [scale_min, scale_max), per-axis mirror, rotation in [0, max_rotation_deg].
EventGraph augment_random(const EventGraph& g, Rng& rng, const AugmentConfig& cfg = {});

/// Disjoint union of graphs; `membership[v]` is the source graph of node v.
struct GraphBatch {
  EventGraph graph;
  std::vector<std::uint32_t> membership;
  std::vector<int> labels;
  std::vector<std::size_t> node_offset;  ///< size num_graphs + 1
  std::vector<std::size_t> edge_offset;  ///< size num_graphs + 1

  std::size_t num_graphs() const noexcept { return labels.size(); }
};

GraphBatch batch_graphs(std::span<const EventGraph> graphs, std::span<const int> labels);
std::vector<EventGraph> unbatch(const GraphBatch& batch);

// Versioned binary container ("EVGGRAPH", version 1, little-endian).
void write_graph(const EventGraph& g, std::ostream& out);
EventGraph read_graph(std::istream& in);
void write_graph(const EventGraph& g, const std::filesystem::path& path);
EventGraph read_graph(const std::filesystem::path& path);

}  // namespace evg
