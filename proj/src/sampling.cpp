#include "evgraph/sampling.hpp"

#include <algorithm>
#include <array>
#include <vector>

#include "evgraph/errors.hpp"
#include "evgraph/random.hpp"

namespace evg {

void SamplingConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (min_cell_xy < 1) throw ConfigError("min_cell_xy must be >= 1");
  if (min_cell_t < 1) throw ConfigError("min_cell_t must be >= 1");
}

namespace {

// Closed integer box [lo, hi] per axis (x, y, t).
struct Box {
  std::array<std::int64_t, 3> lo;
  std::array<std::int64_t, 3> hi;
};

class OctreeSampler {
 public:
  OctreeSampler(const EventStream& stream, const SamplingConfig& cfg)
      : events_(stream.events()), cfg_(cfg), rng_(derive_seed(cfg.seed, {0x0c7ee})) {}

  std::vector<std::size_t> run() {
    std::vector<std::size_t> idx(events_.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.empty()) return {};
    Box box{{events_[0].x, events_[0].y, events_[0].t}, {events_[0].x, events_[0].y, events_[0].t}};
    for (const auto& e : events_) {
      const std::array<std::int64_t, 3> c{e.x, e.y, e.t};
      for (int a = 0; a < 3; ++a) {
        box.lo[a] = std::min(box.lo[a], c[a]);
        box.hi[a] = std::max(box.hi[a], c[a]);
      }
    }
    recurse(box, idx);
    std::sort(picked_.begin(), picked_.end());
    return picked_;
  }

 private:
  std::int64_t coord(std::size_t i, int axis) const {
    const auto& e = events_[i];
    return axis == 0 ? e.x : axis == 1 ? e.y : e.t;
  }

  std::int64_t min_extent(int axis) const { return axis == 2 ? cfg_.min_cell_t : cfg_.min_cell_xy; }

  void recurse(const Box& box, std::vector<std::size_t>& idx) {
    std::array<bool, 3> split{};
    bool any = false;
    for (int a = 0; a < 3; ++a) {
      split[a] = box.hi[a] - box.lo[a] + 1 > min_extent(a);
      any = any || split[a];
    }
    if (idx.size() <= static_cast<std::size_t>(cfg_.k) || !any) {
      picked_.push_back(idx.size() == 1 ? idx[0] : idx[uniform_index(rng_, idx.size())]);
      return;
    }
    std::array<std::int64_t, 3> mid{};
    for (int a = 0; a < 3; ++a) mid[a] = box.lo[a] + (box.hi[a] - box.lo[a]) / 2;

    std::array<std::vector<std::size_t>, 8> children;
    for (auto i : idx) {
      int oct = 0;
      for (int a = 0; a < 3; ++a) {
        if (split[a] && coord(i, a) > mid[a]) oct |= 1 << a;
      }
      children[oct].push_back(i);
    }
    idx.clear();
    idx.shrink_to_fit();
    for (int oct = 0; oct < 8; ++oct) {
      if (children[oct].empty()) continue;
      Box child = box;
      for (int a = 0; a < 3; ++a) {
        if (!split[a]) continue;
        if (oct & (1 << a)) {
          child.lo[a] = mid[a] + 1;
        } else {
          child.hi[a] = mid[a];
        }
      }
      recurse(child, children[oct]);
    }
  }

  std::span<const Event> events_;
  const SamplingConfig& cfg_;
  Rng rng_;
  std::vector<std::size_t> picked_;
};

}  // namespace

EventStream nonuniform_sample(const EventStream& stream, const SamplingConfig& cfg) {
  cfg.validate();
  auto picked = OctreeSampler(stream, cfg).run();
  std::vector<Event> out;
  out.reserve(picked.size());
  for (auto i : picked) out.push_back(stream[i]);
  return EventStream(stream.width(), stream.height(), std::move(out));
}

}  // namespace evg
