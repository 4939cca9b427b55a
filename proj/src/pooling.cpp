#include "evgraph/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "evgraph/errors.hpp"

namespace evg::nn {

void PoolSpec::validate() const {
  if (cluster_w < 1 || cluster_h < 1) throw ConfigError("pooling cluster size must be >= 1");
  if (grid_w < 1 || grid_h < 1) throw ConfigError("pooling grid extent must be >= 1");
}

GraphStructure structure_of(const EventGraph& g) {
  GraphStructure s;
  s.pos = g.pos;
  s.edges = g.edges;
  s.pseudo = g.pseudo;
  s.membership.assign(g.num_nodes(), 0);
  s.num_graphs = 1;
  s.grid_w = g.width;
  s.grid_h = g.height;
  return s;
}

GraphStructure structure_of(const GraphBatch& b) {
  GraphStructure s = structure_of(b.graph);
  s.membership = b.membership;
  s.num_graphs = b.num_graphs();
  return s;
}

std::size_t cluster_cell(const Point3& p, const PoolSpec& spec) {
  auto cell = [](double v, int size, int count) {
    const double c = std::floor(v / size);
    if (!(c >= 0.0)) return 0;  // also catches NaN
    return std::min(static_cast<int>(c), count - 1);
  };
  const int cx = cell(p.x, spec.cluster_w, spec.clusters_x());
  const int cy = cell(p.y, spec.cluster_h, spec.clusters_y());
  return static_cast<std::size_t>(cy) * spec.clusters_x() + cx;
}

PoolResult pool_structure(const GraphStructure& g, const PoolSpec& spec) {
  spec.validate();
  const std::size_t n = g.num_nodes();
  const std::size_t per_graph = spec.clusters_per_graph();
  auto graph_of = [&](std::size_t v) -> std::size_t { return g.membership.empty() ? 0 : g.membership[v]; };

  // global cell key = graph * P + cell; coarse nodes are the sorted distinct keys
  std::vector<std::size_t> key(n);
  for (std::size_t v = 0; v < n; ++v) key[v] = graph_of(v) * per_graph + cluster_cell(g.pos[v], spec);
  std::vector<std::size_t> keys = key;
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  PoolResult r;
  r.assignment.resize(n);
  for (std::size_t v = 0; v < n; ++v) {
    r.assignment[v] = static_cast<std::uint32_t>(std::lower_bound(keys.begin(), keys.end(), key[v]) - keys.begin());
  }
  auto& c = r.coarse;
  c.num_graphs = g.num_graphs;
  c.pos.assign(keys.size(), Point3{});
  c.membership.resize(keys.size());
  std::vector<double> count(keys.size(), 0.0);
  for (std::size_t v = 0; v < n; ++v) {
    auto& p = c.pos[r.assignment[v]];
    p.x += g.pos[v].x;
    p.y += g.pos[v].y;
    p.t += g.pos[v].t;
    count[r.assignment[v]] += 1.0;
  }
  for (std::size_t k = 0; k < keys.size(); ++k) {
    c.pos[k].x /= count[k];
    c.pos[k].y /= count[k];
    c.pos[k].t /= count[k];
    c.membership[k] = static_cast<std::uint32_t>(keys[k] / per_graph);
  }

  c.edges.reserve(g.edges.size());
  for (const auto& e : g.edges) {
    const auto a = r.assignment[e.src];
    const auto b = r.assignment[e.dst];
    if (a != b) c.edges.push_back({a, b});
  }
  std::sort(c.edges.begin(), c.edges.end());
  c.edges.erase(std::unique(c.edges.begin(), c.edges.end()), c.edges.end());

  if (spec.to_cluster_units) {
    for (auto& p : c.pos) {
      p.x /= spec.cluster_w;
      p.y /= spec.cluster_h;
    }
    c.grid_w = spec.clusters_x();
    c.grid_h = spec.clusters_y();
  } else {
    c.grid_w = g.grid_w;
    c.grid_h = g.grid_h;
  }
  c.pseudo = normalized_pseudo(c.pos, c.edges, c.membership, c.num_graphs);
  return r;
}

ad::Var pool_features(ad::Var x, const PoolResult& pooled, PoolMode mode) {
  const auto n = pooled.coarse.num_nodes();
  return mode == PoolMode::Max ? ad::segment_max(x, pooled.assignment, n) : ad::segment_mean(x, pooled.assignment, n);
}

ad::Var pool_to_grid(ad::Var x, const GraphStructure& g, const PoolSpec& spec) {
  spec.validate();
  const std::size_t per_graph = spec.clusters_per_graph();
  std::vector<std::uint32_t> seg(g.num_nodes());
  for (std::size_t v = 0; v < seg.size(); ++v) {
    const std::size_t graph = g.membership.empty() ? 0 : g.membership[v];
    seg[v] = static_cast<std::uint32_t>(graph * per_graph + cluster_cell(g.pos[v], spec));
  }
  const std::size_t total = g.num_graphs * per_graph;
  return spec.mode == PoolMode::Max ? ad::segment_max(x, seg, total) : ad::segment_mean(x, seg, total);
}

namespace {

// Reduces features of `g` into `num_out` rows given a node -> row assignment.
std::vector<double> reduce_features(const EventGraph& g, std::span<const std::uint32_t> assign, std::size_t num_out,
                                    PoolMode mode) {
  const int ch = g.channels;
  std::vector<double> out(num_out * ch, 0.0);
  std::vector<std::size_t> count(num_out, 0);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    const auto k = assign[v];
    for (int c = 0; c < ch; ++c) {
      const double f = g.feature(v, c);
      double& o = out[k * ch + c];
      if (mode == PoolMode::Max) {
        o = count[k] == 0 ? f : std::max(o, f);
      } else {
        o += f;
      }
    }
    ++count[k];
  }
  if (mode == PoolMode::Avg) {
    for (std::size_t k = 0; k < num_out; ++k) {
      for (int c = 0; c < ch; ++c) out[k * ch + c] = count[k] ? out[k * ch + c] / count[k] : 0.0;
    }
  }
  return out;
}

}  // namespace

EventGraph graph_pool(const EventGraph& g, const PoolSpec& spec) {
  auto pooled = pool_structure(structure_of(g), spec);
  EventGraph out;
  out.width = pooled.coarse.grid_w;
  out.height = pooled.coarse.grid_h;
  out.channels = g.channels;
  out.features = reduce_features(g, pooled.assignment, pooled.coarse.num_nodes(), spec.mode);
  out.pos = std::move(pooled.coarse.pos);
  out.edges = std::move(pooled.coarse.edges);
  out.pseudo = std::move(pooled.coarse.pseudo);
  return out;
}

EventGraph pad_to_grid(const EventGraph& g, const PoolSpec& spec) {
  spec.validate();
  const std::size_t p = spec.clusters_per_graph();
  std::vector<std::uint32_t> assign(g.num_nodes());
  for (std::size_t v = 0; v < g.num_nodes(); ++v) assign[v] = static_cast<std::uint32_t>(cluster_cell(g.pos[v], spec));

  EventGraph out;
  out.width = g.width;
  out.height = g.height;
  out.channels = g.channels;
  out.features = reduce_features(g, assign, p, spec.mode);
  out.pos.resize(p);
  std::vector<double> count(p, 0.0);
  for (std::size_t v = 0; v < g.num_nodes(); ++v) {
    auto& q = out.pos[assign[v]];
    q.x += g.pos[v].x;
    q.y += g.pos[v].y;
    q.t += g.pos[v].t;
    count[assign[v]] += 1.0;
  }
  for (std::size_t k = 0; k < p; ++k) {
    if (count[k] > 0.0) {
      out.pos[k].x /= count[k];
      out.pos[k].y /= count[k];
      out.pos[k].t /= count[k];
    } else {
      const auto cx = static_cast<double>(k % spec.clusters_x());
      const auto cy = static_cast<double>(k / spec.clusters_x());
      out.pos[k] = {(cx + 0.5) * spec.cluster_w, (cy + 0.5) * spec.cluster_h, 0.0};
    }
  }
  for (const auto& e : g.edges) {
    if (assign[e.src] != assign[e.dst]) out.edges.push_back({assign[e.src], assign[e.dst]});
  }
  std::sort(out.edges.begin(), out.edges.end());
  out.edges.erase(std::unique(out.edges.begin(), out.edges.end()), out.edges.end());
  refresh_pseudo(out);
  return out;
}

}  // namespace evg::nn
