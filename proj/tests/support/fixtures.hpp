#pragma once

#include <cmath>
#include <vector>

#include "evgraph/events.hpp"
#include "evgraph/random.hpp"

namespace fixtures {

/// Slow saccade over a random binary texture filling a 240x180 sensor.
/// Pixels whose texture value changes between 100 us steps fire `burst`
/// events jittered within 500 us; the stream lasts 30 ms.
struct SaccadeScene {
  int width = 240;
  int height = 180;
  int rects = 100;
  int rect_min = 2;
  int rect_span = 8;
  double speed_px_per_ms = 0.05;
  int burst = 2;
};

inline evg::EventStream saccade_scene(const SaccadeScene& p, std::uint64_t seed) {
  using namespace evg;
  Rng rng(seed);
  const int w = p.width, h = p.height;
  std::vector<std::uint8_t> tex(static_cast<std::size_t>(w) * h, 0);
  for (int r = 0; r < p.rects; ++r) {
    const int rw = p.rect_min + static_cast<int>(uniform_index(rng, p.rect_span));
    const int rh = p.rect_min + static_cast<int>(uniform_index(rng, p.rect_span));
    const int x0 = static_cast<int>(uniform_index(rng, w - rw));
    const int y0 = static_cast<int>(uniform_index(rng, h - rh));
    for (int y = y0; y < y0 + rh; ++y) {
      for (int x = x0; x < x0 + rw; ++x) tex[y * w + x] ^= 1;
    }
  }
  auto at = [&](double ox, double oy, int x, int y) {
    const int yy = ((y + static_cast<int>(std::lround(oy))) % h + h) % h;
    const int xx = ((x + static_cast<int>(std::lround(ox))) % w + w) % w;
    return tex[yy * w + xx];
  };
  const double ang = uniform(rng, 0.0, 6.283);
  const double dx = std::cos(ang) * p.speed_px_per_ms / 1000.0;
  const double dy = std::sin(ang) * p.speed_px_per_ms / 1000.0;
  const std::int64_t step = 100, duration = 30'000;
  std::vector<Event> ev;
  for (std::int64_t t = step; t < duration; t += step) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int v0 = at(dx * (t - step), dy * (t - step), x, y);
        const int v1 = at(dx * t, dy * t, x, y);
        if (v0 == v1) continue;
        for (int b = 0; b < p.burst; ++b) {
          ev.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y),
                             t - step + static_cast<std::int64_t>(uniform_index(rng, 500)),
                             static_cast<std::int8_t>(v1 ? 1 : -1)});
        }
      }
    }
  }
  return EventStream(w, h, std::move(ev));
}

}  // namespace fixtures
