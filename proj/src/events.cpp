#include "evgraph/events.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>

#include "evgraph/errors.hpp"
#include "evgraph/random.hpp"

namespace evg {

EventStream::EventStream(int width, int height, std::vector<Event> events)
    : width_(width), height_(height), events_(std::move(events)) {
  if (width <= 0 || height <= 0) {
    throw RangeError("sensor geometry must be positive, got " + std::to_string(width) + "x" +
                     std::to_string(height));
  }
  for (const auto& e : events_) {
    if (e.x >= width || e.y >= height) {
      throw RangeError("event (" + std::to_string(e.x) + ", " + std::to_string(e.y) + ") outside " +
                       std::to_string(width) + "x" + std::to_string(height) + " sensor");
    }
    if (e.p != 1 && e.p != -1) throw RangeError("polarity must be +1 or -1, got " + std::to_string(e.p));
    if (e.t < 0) throw RangeError("negative timestamp " + std::to_string(e.t));
  }
  if (!std::is_sorted(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.t < b.t; })) {
    std::stable_sort(events_.begin(), events_.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
  }
}

// --- N-MNIST binary -------------------------------------------------------

EventStream parse_nmnist_bin(std::span<const std::uint8_t> raw, int width, int height) {
  if (raw.size() % 5 != 0) {
    throw ParseError("N-MNIST payload of " + std::to_string(raw.size()) + " bytes is not a multiple of 5");
  }
  std::vector<Event> events;
  events.reserve(raw.size() / 5);
  for (std::size_t off = 0; off < raw.size(); off += 5) {
    Event e;
    e.x = raw[off];
    e.y = raw[off + 1];
    if (e.x >= width || e.y >= height) {
      throw RangeError("record " + std::to_string(off / 5) + ": pixel (" + std::to_string(e.x) + ", " +
                       std::to_string(e.y) + ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    e.p = (raw[off + 2] & 0x80) ? 1 : -1;
    e.t = (std::int64_t{raw[off + 2] & 0x7f} << 16) | (std::int64_t{raw[off + 3]} << 8) | raw[off + 4];
    events.push_back(e);
  }
  return EventStream(width, height, std::move(events));
}

std::vector<std::uint8_t> encode_nmnist_bin(const EventStream& stream) {
  std::vector<std::uint8_t> out;
  out.reserve(stream.size() * 5);
  for (const auto& e : stream) {
    if (e.x > 255 || e.y > 255 || e.t > kNmnistMaxTimestamp) {
      throw RangeError("event does not fit the 5-byte record layout");
    }
    out.push_back(static_cast<std::uint8_t>(e.x));
    out.push_back(static_cast<std::uint8_t>(e.y));
    out.push_back(static_cast<std::uint8_t>((e.p > 0 ? 0x80 : 0x00) | ((e.t >> 16) & 0x7f)));
    out.push_back(static_cast<std::uint8_t>((e.t >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>(e.t & 0xff));
  }
  return out;
}

EventStream read_nmnist_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_nmnist_bin(raw);
}

// --- portable text ----------------------------------------------------------

namespace {

bool blank(const std::string& line) {
  return std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); });
}

}  // namespace

EventStream parse_portable(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  int width = 0;
  int height = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::istringstream ss(line);
    std::string rest;
    if (!(ss >> width >> height) || (ss >> rest)) throw ParseError("expected header \"W H\"", lineno);
    if (width <= 0 || height <= 0) throw ParseError("sensor geometry must be positive", lineno);
    break;
  }
  if (width == 0) throw ParseError("missing header");

  std::vector<Event> events;
  while (std::getline(in, line)) {
    ++lineno;
    if (blank(line)) continue;
    std::istringstream ss(line);
    long long x = 0, y = 0, t = 0, p = 0;
    std::string rest;
    if (!(ss >> x >> y >> t >> p) || (ss >> rest)) throw ParseError("expected \"x y t p\"", lineno);
    if (t < 0) throw ParseError("negative timestamp", lineno);
    if (p != 1 && p != -1) throw ParseError("polarity must be 1 or -1", lineno);
    if (x < 0 || y < 0 || x >= width || y >= height) {
      throw RangeError("line " + std::to_string(lineno) + ": pixel (" + std::to_string(x) + ", " +
                       std::to_string(y) + ") outside " + std::to_string(width) + "x" + std::to_string(height));
    }
    events.push_back(Event{static_cast<std::uint16_t>(x), static_cast<std::uint16_t>(y), t,
                           static_cast<std::int8_t>(p)});
  }
  return EventStream(width, height, std::move(events));
}

void write_portable(const EventStream& stream, std::ostream& out) {
  out << stream.width() << ' ' << stream.height() << '\n';
  for (const auto& e : stream) out << e.x << ' ' << e.y << ' ' << e.t << ' ' << int{e.p} << '\n';
}

EventStream read_portable(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return parse_portable(in);
}

void write_portable(const EventStream& stream, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_portable(stream, out);
  if (!out) throw DataError("write failed for " + path.string());
}

// --- windowing ----------------------------------------------------------------

EventStream extract_window(const EventStream& stream, std::int64_t start, std::int64_t length) {
  if (length <= 0) throw RangeError("window length must be positive");
  auto events = stream.events();
  auto lo = std::lower_bound(events.begin(), events.end(), start,
                             [](const Event& e, std::int64_t t) { return e.t < t; });
  auto hi = std::lower_bound(lo, events.end(), start + length,
                             [](const Event& e, std::int64_t t) { return e.t < t; });
  std::vector<Event> out(lo, hi);
  for (auto& e : out) e.t -= start;
  return EventStream(stream.width(), stream.height(), std::move(out));
}

// --- synthetic moving shapes ------------------------------------------------

namespace {

struct ShapePose {
  double cx;
  double cy;
  double angle;  // radians
};

// Pixel-center occupancy test in the shape's own frame; `r` is the nominal radius.
bool inside_shape(int shape, double u, double v, double r) {
  switch (shape) {
    case 0:  // bar
      return std::abs(u) <= 0.3 * r && std::abs(v) <= r;
    case 1:  // circle
      return u * u + v * v <= 0.8 * r * 0.8 * r;
    case 2:  // cross
      return (std::abs(u) <= 0.25 * r && std::abs(v) <= r) || (std::abs(v) <= 0.25 * r && std::abs(u) <= r);
    case 3:  // square
      return std::abs(u) <= 0.7 * r && std::abs(v) <= 0.7 * r;
    default: {  // triangle, circumradius r, apex up
      constexpr double s3 = std::numbers::sqrt3;
      // three half-planes of an equilateral triangle centred at the origin
      return v >= -0.5 * r && (s3 * u + v) <= r && (-s3 * u + v) <= r;
    }
  }
}

struct Motion {
  double cx0, cy0, amp, phase, speed, angle0;
};

ShapePose pose_at(int shape, const Motion& m, double t_ms) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const double w = two_pi * m.speed / 200.0;  // one cycle per ~200 ms
  const double s = m.phase + w * t_ms;
  switch (shape) {
    case 0:  // horizontal sweep
      return {m.cx0 + m.amp * std::sin(s), m.cy0, m.angle0};
    case 1:  // circular orbit
      return {m.cx0 + m.amp * std::cos(s), m.cy0 + m.amp * std::sin(s), m.angle0};
    case 2:  // diagonal sweep with slow spin
      return {m.cx0 + m.amp * std::sin(s), m.cy0 + m.amp * std::sin(s), m.angle0 + 0.5 * s};
    case 3:  // vertical sweep
      return {m.cx0, m.cy0 + m.amp * std::sin(s), m.angle0};
    default:  // figure eight
      return {m.cx0 + m.amp * std::sin(s), m.cy0 + 0.5 * m.amp * std::sin(2.0 * s), m.angle0};
  }
}

void rasterize(int shape, const ShapePose& pose, double r, int width, int height, std::vector<std::uint8_t>& occ) {
  occ.assign(static_cast<std::size_t>(width) * height, 0);
  const double c = std::cos(pose.angle);
  const double s = std::sin(pose.angle);
  const int x0 = std::max(0, static_cast<int>(std::floor(pose.cx - 1.5 * r)));
  const int x1 = std::min(width - 1, static_cast<int>(std::ceil(pose.cx + 1.5 * r)));
  const int y0 = std::max(0, static_cast<int>(std::floor(pose.cy - 1.5 * r)));
  const int y1 = std::min(height - 1, static_cast<int>(std::ceil(pose.cy + 1.5 * r)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = x + 0.5 - pose.cx;
      const double dy = y + 0.5 - pose.cy;
      const double u = c * dx + s * dy;
      const double v = -s * dx + c * dy;
      occ[static_cast<std::size_t>(y) * width + x] = inside_shape(shape, u, v, r) ? 1 : 0;
    }
  }
}

}  // namespace

std::string_view shape_name(int class_id) {
  static constexpr std::array<std::string_view, kNumShapes> names{"bar", "circle", "cross", "square", "triangle"};
  if (class_id < 0) throw RangeError("class id must be non-negative");
  return names[static_cast<std::size_t>(class_id % kNumShapes)];
}

EventStream synth_moving_shape(const SynthParams& params) {
  if (params.width <= 0 || params.height <= 0) throw RangeError("sensor geometry must be positive");
  if (params.class_id < 0) throw RangeError("class id must be non-negative");
  if (params.duration_us <= 0 || params.rate <= 0.0) return EventStream(params.width, params.height);

  const int shape = params.class_id % kNumShapes;
  Rng rng(derive_seed(params.seed, {static_cast<std::uint64_t>(params.class_id), 0x5e7f}));
  const double extent = std::min(params.width, params.height);
  const double r = 0.2 * extent;

  Motion motion;
  motion.cx0 = 0.5 * params.width + uniform(rng, -0.08, 0.08) * extent;
  motion.cy0 = 0.5 * params.height + uniform(rng, -0.08, 0.08) * extent;
  motion.amp = uniform(rng, 0.12, 0.2) * extent;
  motion.phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  motion.speed = uniform(rng, 0.8, 1.2);
  motion.angle0 = uniform(rng, -10.0, 10.0) * std::numbers::pi / 180.0;

  constexpr std::int64_t step_us = 250;
  const double step_ms = step_us / 1000.0;
  const double noise_fraction = std::clamp(params.noise_fraction, 0.0, 1.0);
  std::poisson_distribution<int> signal_count(params.rate * (1.0 - noise_fraction) * step_ms);
  std::poisson_distribution<int> noise_count(params.rate * noise_fraction * step_ms);

  std::vector<std::uint8_t> before;
  std::vector<std::uint8_t> after;
  std::vector<std::uint32_t> changed;
  std::vector<Event> events;
  rasterize(shape, pose_at(shape, motion, 0.0), r, params.width, params.height, before);

  for (std::int64_t t0 = 0; t0 < params.duration_us; t0 += step_us) {
    const std::int64_t span_us = std::min(step_us, params.duration_us - t0);
    rasterize(shape, pose_at(shape, motion, (t0 + span_us) / 1000.0), r, params.width, params.height, after);
    changed.clear();
    for (std::uint32_t i = 0; i < after.size(); ++i) {
      if (after[i] != before[i]) changed.push_back(i);
    }
    if (!changed.empty()) {
      const int n = signal_count(rng);
      for (int k = 0; k < n; ++k) {
        const auto idx = changed[uniform_index(rng, changed.size())];
        Event e;
        e.x = static_cast<std::uint16_t>(idx % params.width);
        e.y = static_cast<std::uint16_t>(idx / params.width);
        e.t = t0 + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(span_us)));
        e.p = after[idx] ? 1 : -1;
        events.push_back(e);
      }
    }
    const int n_noise = noise_count(rng);
    for (int k = 0; k < n_noise; ++k) {
      Event e;
      e.x = static_cast<std::uint16_t>(uniform_index(rng, params.width));
      e.y = static_cast<std::uint16_t>(uniform_index(rng, params.height));
      e.t = t0 + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(span_us)));
      e.p = (rng() & 1) ? 1 : -1;
      events.push_back(e);
    }
    before.swap(after);
  }
  return EventStream(params.width, params.height, std::move(events));
}

}  // namespace evg
