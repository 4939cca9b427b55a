#include "evgraph/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <unordered_map>

#include "evgraph/binary_io.hpp"
#include "evgraph/errors.hpp"

namespace evg {

void GraphConfig::validate() const {
  if (!(radius > 0.0)) throw ConfigError("radius must be > 0");
  if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (!(alpha + beta > 0.0)) throw ConfigError("alpha + beta must be > 0");
  if (max_degree < 1) throw ConfigError("dmax must be >= 1");
}

double st_distance(const Point3& a, const Point3& b, const GraphConfig& cfg) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dt = a.t - b.t;
  return std::sqrt(cfg.alpha * (dx * dx + dy * dy) + cfg.beta * dt * dt);
}

std::vector<Pseudo> normalized_pseudo(std::span<const Point3> pos, std::span<const Edge> edges,
                                      std::span<const std::uint32_t> membership, std::size_t num_graphs) {
  std::vector<Pseudo> out(edges.size());
  std::vector<Pseudo> max_abs(std::max<std::size_t>(num_graphs, 1), Pseudo{0.0, 0.0});
  auto graph_of = [&](std::uint32_t node) -> std::size_t { return membership.empty() ? 0 : membership[node]; };
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& a = pos[edges[e].src];
    const auto& b = pos[edges[e].dst];
    out[e] = {std::abs(a.x - b.x), std::abs(a.y - b.y)};
    auto& m = max_abs[graph_of(edges[e].src)];
    m[0] = std::max(m[0], out[e][0]);
    m[1] = std::max(m[1], out[e][1]);
  }
  for (std::size_t e = 0; e < edges.size(); ++e) {
    const auto& m = max_abs[graph_of(edges[e].src)];
    for (int c = 0; c < 2; ++c) out[e][c] = m[c] > 0.0 ? std::min(1.0, out[e][c] / m[c]) : 0.5;
  }
  return out;
}

void refresh_pseudo(EventGraph& g) { g.pseudo = normalized_pseudo(g.pos, g.edges); }

// --- construction -------------------------------------------------------------

namespace {

struct Candidate {
  double d2;
  double abs_dt;
  std::uint32_t node;
};

std::int64_t bucket_key(std::int64_t bx, std::int64_t by) { return (bx << 32) ^ (by & 0xffffffffLL); }

}  // namespace

EventGraph build_radius_graph(const EventStream& stream, const GraphConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw DataError("cannot build a graph from an empty event stream");

  EventGraph g;
  g.width = stream.width();
  g.height = stream.height();
  const std::size_t n = stream.size();
  g.pos.resize(n);
  g.features.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = stream[i];
    g.pos[i] = {static_cast<double>(e.x), static_cast<double>(e.y), static_cast<double>(e.t)};
    g.features[i] = e.p;
  }

  // Spatial buckets of edge R/sqrt(alpha); neighbours lie in the 3x3 block
  // around a node's bucket. Bucket lists are in node order, which is time order.
  const bool spatial = cfg.alpha > 0.0;
  const double cell = spatial ? cfg.radius / std::sqrt(cfg.alpha) : 1.0;
  const double max_dt = cfg.beta > 0.0 ? cfg.radius / std::sqrt(cfg.beta) : std::numeric_limits<double>::infinity();
  auto bucket_of = [&](const Point3& p) -> std::pair<std::int64_t, std::int64_t> {
    if (!spatial) return {0, 0};
    return {static_cast<std::int64_t>(std::floor(p.x / cell)), static_cast<std::int64_t>(std::floor(p.y / cell))};
  };
  std::unordered_map<std::int64_t, std::vector<std::uint32_t>> buckets;
  for (std::uint32_t i = 0; i < n; ++i) {
    auto [bx, by] = bucket_of(g.pos[i]);
    buckets[bucket_key(bx, by)].push_back(i);
  }

  std::vector<Candidate> cand;
  for (std::uint32_t i = 0; i < n; ++i) {
    const auto& pi = g.pos[i];
    cand.clear();
    auto [bx, by] = bucket_of(pi);
    const int reach = spatial ? 1 : 0;
    for (int ox = -reach; ox <= reach; ++ox) {
      for (int oy = -reach; oy <= reach; ++oy) {
        auto it = buckets.find(bucket_key(bx + ox, by + oy));
        if (it == buckets.end()) continue;
        const auto& list = it->second;
        auto first = std::lower_bound(list.begin(), list.end(), pi.t - max_dt,
                                      [&](std::uint32_t j, double t) { return g.pos[j].t < t; });
        for (auto jt = first; jt != list.end(); ++jt) {
          const std::uint32_t j = *jt;
          const auto& pj = g.pos[j];
          if (pj.t > pi.t + max_dt) break;
          if (j == i) continue;
          const double dx = pi.x - pj.x;
          const double dy = pi.y - pj.y;
          const double dt = pi.t - pj.t;
          const double d2 = cfg.alpha * (dx * dx + dy * dy) + cfg.beta * dt * dt;
          if (std::sqrt(d2) <= cfg.radius) cand.push_back({d2, std::abs(dt), j});
        }
      }
    }
    auto closer = [](const Candidate& a, const Candidate& b) {
      if (a.d2 != b.d2) return a.d2 < b.d2;
      if (a.abs_dt != b.abs_dt) return a.abs_dt < b.abs_dt;
      return a.node < b.node;
    };
    const auto keep = std::min<std::size_t>(cand.size(), static_cast<std::size_t>(cfg.max_degree));
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(keep), cand.end(), closer);
    for (std::size_t c = 0; c < keep; ++c) g.edges.push_back({i, cand[c].node});
  }
  refresh_pseudo(g);
  return g;
}

// --- augmentation -------------------------------------------------------------

namespace {

template <typename Fn>
EventGraph transform_positions(const EventGraph& g, Fn&& fn) {
  EventGraph out = g;
  for (auto& p : out.pos) fn(p);
  refresh_pseudo(out);
  return out;
}

double centre_x(const EventGraph& g) { return 0.5 * (g.width - 1); }
double centre_y(const EventGraph& g) { return 0.5 * (g.height - 1); }

}  // namespace

EventGraph augment_scale(const EventGraph& g, double factor) {
  if (!(factor > 0.0)) throw RangeError("scale factor must be positive");
  const double cx = centre_x(g);
  const double cy = centre_y(g);
  return transform_positions(g, [&](Point3& p) {
    p.x = cx + factor * (p.x - cx);
    p.y = cy + factor * (p.y - cy);
  });
}

EventGraph augment_mirror(const EventGraph& g, int axis) {
  if (axis != 0 && axis != 1) throw RangeError("mirror axis must be 0 or 1");
  return transform_positions(g, [&](Point3& p) {
    if (axis == 0) {
      p.x = (g.width - 1) - p.x;
    } else {
      p.y = (g.height - 1) - p.y;
    }
  });
}

EventGraph augment_rotate(const EventGraph& g, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(a);
  const double s = std::sin(a);
  const double cx = centre_x(g);
  const double cy = centre_y(g);
  return transform_positions(g, [&](Point3& p) {
    const double dx = p.x - cx;
    const double dy = p.y - cy;
    p.x = cx + c * dx - s * dy;
    p.y = cy + s * dx + c * dy;
  });
}

EventGraph augment_random(const EventGraph& g, Rng& rng, const AugmentConfig& cfg) {
  const double factor = uniform(rng, cfg.scale_min, cfg.scale_max);
  const bool flip_x = uniform01(rng) < cfg.flip_probability;
  const bool flip_y = uniform01(rng) < cfg.flip_probability;
  const double angle = uniform(rng, 0.0, cfg.max_rotation_deg);
  EventGraph out = augment_scale(g, factor);
  if (flip_x) out = augment_mirror(out, 0);
  if (flip_y) out = augment_mirror(out, 1);
  return augment_rotate(out, angle);
}

// --- batching -------------------------------------------------------------------

GraphBatch batch_graphs(std::span<const EventGraph> graphs, std::span<const int> labels) {
  if (graphs.empty()) throw DataError("cannot batch zero graphs");
  if (labels.size() != graphs.size()) throw DataError("label count does not match graph count");
  GraphBatch b;
  b.graph.width = graphs[0].width;
  b.graph.height = graphs[0].height;
  b.graph.channels = graphs[0].channels;
  b.labels.assign(labels.begin(), labels.end());
  b.node_offset.push_back(0);
  b.edge_offset.push_back(0);
  for (std::size_t gi = 0; gi < graphs.size(); ++gi) {
    const auto& g = graphs[gi];
    if (g.channels != b.graph.channels) {
      throw ShapeError("feature dimension mismatch in batch: " + std::to_string(g.channels) + " vs " +
                       std::to_string(b.graph.channels));
    }
    if (g.width != b.graph.width || g.height != b.graph.height) {
      throw ShapeError("sensor geometry mismatch in batch");
    }
    const auto base = static_cast<std::uint32_t>(b.graph.pos.size());
    b.graph.pos.insert(b.graph.pos.end(), g.pos.begin(), g.pos.end());
    b.graph.features.insert(b.graph.features.end(), g.features.begin(), g.features.end());
    for (const auto& e : g.edges) b.graph.edges.push_back({e.src + base, e.dst + base});
    b.graph.pseudo.insert(b.graph.pseudo.end(), g.pseudo.begin(), g.pseudo.end());
    b.membership.insert(b.membership.end(), g.num_nodes(), static_cast<std::uint32_t>(gi));
    b.node_offset.push_back(b.graph.pos.size());
    b.edge_offset.push_back(b.graph.edges.size());
  }
  return b;
}

std::vector<EventGraph> unbatch(const GraphBatch& batch) {
  std::vector<EventGraph> out;
  const auto& bg = batch.graph;
  for (std::size_t gi = 0; gi < batch.num_graphs(); ++gi) {
    EventGraph g;
    g.width = bg.width;
    g.height = bg.height;
    g.channels = bg.channels;
    const auto n0 = batch.node_offset[gi];
    const auto n1 = batch.node_offset[gi + 1];
    const auto e0 = batch.edge_offset[gi];
    const auto e1 = batch.edge_offset[gi + 1];
    g.pos.assign(bg.pos.begin() + n0, bg.pos.begin() + n1);
    g.features.assign(bg.features.begin() + n0 * bg.channels, bg.features.begin() + n1 * bg.channels);
    for (auto e = e0; e < e1; ++e) {
      g.edges.push_back({static_cast<std::uint32_t>(bg.edges[e].src - n0),
                         static_cast<std::uint32_t>(bg.edges[e].dst - n0)});
    }
    g.pseudo.assign(bg.pseudo.begin() + e0, bg.pseudo.begin() + e1);
    out.push_back(std::move(g));
  }
  return out;
}

// --- serialization ----------------------------------------------------------------

namespace {
constexpr char kGraphMagic[9] = "EVGGRAPH";
constexpr std::uint32_t kGraphVersion = 1;
}  // namespace

void write_graph(const EventGraph& g, std::ostream& out) {
  out.write(kGraphMagic, 8);
  io::write_le<std::uint32_t>(out, kGraphVersion);
  io::write_le<std::int32_t>(out, g.width);
  io::write_le<std::int32_t>(out, g.height);
  io::write_le<std::uint64_t>(out, g.num_nodes());
  io::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(g.channels));
  io::write_le<std::uint64_t>(out, g.num_edges());
  for (const auto& p : g.pos) {
    io::write_le(out, p.x);
    io::write_le(out, p.y);
    io::write_le(out, p.t);
  }
  for (double f : g.features) io::write_le(out, f);
  for (const auto& e : g.edges) {
    io::write_le<std::uint32_t>(out, e.src);
    io::write_le<std::uint32_t>(out, e.dst);
  }
  for (const auto& u : g.pseudo) {
    io::write_le(out, u[0]);
    io::write_le(out, u[1]);
  }
}

EventGraph read_graph(std::istream& in) {
  io::expect_magic(in, kGraphMagic);
  const auto version = io::read_le<std::uint32_t>(in);
  if (version != kGraphVersion) throw ParseError("unsupported graph container version " + std::to_string(version));
  EventGraph g;
  g.width = io::read_le<std::int32_t>(in);
  g.height = io::read_le<std::int32_t>(in);
  const auto n = io::read_le<std::uint64_t>(in);
  g.channels = static_cast<int>(io::read_le<std::uint32_t>(in));
  const auto e = io::read_le<std::uint64_t>(in);
  if (n > (1ULL << 32) || e > (1ULL << 36) || g.channels < 1) throw ParseError("implausible graph header");
  g.pos.resize(n);
  for (auto& p : g.pos) {
    p.x = io::read_f64(in);
    p.y = io::read_f64(in);
    p.t = io::read_f64(in);
  }
  g.features.resize(n * static_cast<std::size_t>(g.channels));
  for (auto& f : g.features) f = io::read_f64(in);
  g.edges.resize(e);
  for (auto& ed : g.edges) {
    ed.src = io::read_le<std::uint32_t>(in);
    ed.dst = io::read_le<std::uint32_t>(in);
    if (ed.src >= n || ed.dst >= n) throw ParseError("edge endpoint out of range");
  }
  g.pseudo.resize(e);
  for (auto& u : g.pseudo) {
    u[0] = io::read_f64(in);
    u[1] = io::read_f64(in);
  }
  return g;
}

void write_graph(const EventGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  write_graph(g, out);
}

EventGraph read_graph(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_graph(in);
}

}  // namespace evg
