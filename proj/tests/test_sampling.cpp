#include <doctest.h>

#include <algorithm>

#include "evgraph/errors.hpp"
#include "evgraph/sampling.hpp"
#include "support/oracles.hpp"

using namespace evg;

namespace {

bool is_subset(const EventStream& sub, const EventStream& full) {
  std::vector<Event> a(full.begin(), full.end());
  auto key = [](const Event& e) { return std::tuple(e.t, e.x, e.y, e.p); };
  std::sort(a.begin(), a.end(), [&](const Event& l, const Event& r) { return key(l) < key(r); });
  for (const auto& e : sub) {
    auto it = std::lower_bound(a.begin(), a.end(), e, [&](const Event& l, const Event& r) { return key(l) < key(r); });
    if (it == a.end() || !(*it == e)) return false;
    a.erase(it);
  }
  return true;
}

}  // namespace

TEST_CASE("k = 1 on distinct cells is the identity") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Event> ev;
    std::set<std::tuple<int, int, std::int64_t>> seen;
    while (ev.size() < 200) {
      Event e{static_cast<std::uint16_t>(uniform_index(rng, 34)), static_cast<std::uint16_t>(uniform_index(rng, 34)),
              static_cast<std::int64_t>(uniform_index(rng, 50'000)), 1};
      if (seen.insert({e.x, e.y, e.t}).second) ev.push_back(e);
    }
    EventStream s(34, 34, ev);
    SamplingConfig cfg;
    cfg.k = 1;
    cfg.seed = static_cast<std::uint64_t>(trial);
    CHECK(nonuniform_sample(s, cfg) == s);
  }
}

TEST_CASE("single event and empty input") {
  EventStream one(34, 34, {Event{3, 4, 5, -1}});
  SamplingConfig cfg;
  CHECK(nonuniform_sample(one, cfg) == one);
  CHECK(nonuniform_sample(EventStream(34, 34), cfg).empty());
}

TEST_CASE("corner cube fixture matches the reference recursion") {
  // 64 events: 8 at each corner of an 8-pixel cube spanning 8 ms
  std::vector<Event> ev;
  for (int c = 0; c < 8; ++c) {
    for (int r = 0; r < 8; ++r) {
      ev.push_back(Event{static_cast<std::uint16_t>((c & 1) ? 7 : 0), static_cast<std::uint16_t>((c & 2) ? 7 : 0),
                         ((c & 4) ? 7'999 : 0) + r, static_cast<std::int8_t>(r % 2 ? 1 : -1)});
    }
  }
  EventStream s(34, 34, ev);
  SamplingConfig cfg;
  cfg.k = 8;
  const auto out = nonuniform_sample(s, cfg);
  CHECK(out.size() == oracle::octree_leaves(s, 8));
  CHECK(out.size() == 8);
}

TEST_CASE("output count equals the reference leaf count on random streams") {
  Rng rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = 1 + uniform_index(rng, 400);
    auto s = oracle::random_stream(rng, 34, 34, n, static_cast<std::int64_t>(uniform_index(rng, 100'000)));
    SamplingConfig cfg;
    cfg.k = 1 + static_cast<int>(uniform_index(rng, 12));
    cfg.seed = trial;
    const auto out = nonuniform_sample(s, cfg);
    CHECK(out.size() == oracle::octree_leaves(s, cfg.k));
    CHECK(is_subset(out, s));
    CHECK(std::is_sorted(out.begin(), out.end(), [](const Event& a, const Event& b) { return a.t < b.t; }));
  }
}

TEST_CASE("min_cell stops subdivision") {
  Rng rng(17);
  auto s = oracle::random_stream(rng, 34, 34, 300, 20'000);
  SamplingConfig cfg;
  cfg.k = 1;
  cfg.min_cell_xy = 4;
  cfg.min_cell_t = 1000;
  CHECK(nonuniform_sample(s, cfg).size() == oracle::octree_leaves(s, 1, 4, 1000));
}

TEST_CASE("duplicates collapse to one representative") {
  std::vector<Event> ev(10, Event{5, 5, 100, 1});
  EventStream s(34, 34, ev);
  SamplingConfig cfg;
  cfg.k = 1;
  CHECK(nonuniform_sample(s, cfg).size() == 1);
}

TEST_CASE("output size is non-increasing in k") {
  Rng rng(23);
  for (int trial = 0; trial < 30; ++trial) {
    auto s = oracle::random_stream(rng, 34, 34, 500, 30'000);
    std::size_t prev = s.size() + 1;
    for (int k = 1; k <= 16; ++k) {
      SamplingConfig cfg;
      cfg.k = k;
      cfg.seed = 99;
      const auto m = nonuniform_sample(s, cfg).size();
      CHECK(m <= prev);
      prev = m;
    }
  }
}

TEST_CASE("deterministic for a fixed seed") {
  Rng rng(29);
  auto s = oracle::random_stream(rng, 34, 34, 800, 30'000);
  SamplingConfig a;
  a.seed = 5;
  CHECK(nonuniform_sample(s, a) == nonuniform_sample(s, a));
  SamplingConfig b = a;
  b.seed = 6;
  CHECK(nonuniform_sample(s, b).size() == nonuniform_sample(s, a).size());
}

TEST_CASE("invalid config") {
  SamplingConfig cfg;
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK_THROWS_AS(nonuniform_sample(EventStream(34, 34), cfg), ConfigError);
}
