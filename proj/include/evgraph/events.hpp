#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

namespace evg {

/// One spike from a neuromorphic sensor. Timestamps are integer microseconds.
struct Event {
  std::uint16_t x = 0;
  std::uint16_t y = 0;
  std::int64_t t = 0;
  std::int8_t p = 1;  ///< +1 (ON) or -1 (OFF)

  friend bool operator==(const Event&, const Event&) = default;
};

/// Time-ordered events with the sensor geometry they were recorded on.
///
/// Construction validates every event against the geometry and stable-sorts by
/// timestamp, so any EventStream value satisfies the stream invariants.
class EventStream {
 public:
  EventStream() = default;
  EventStream(int width, int height, std::vector<Event> events = {});

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  std::size_t size() const noexcept { return events_.size(); }
  bool empty() const noexcept { return events_.empty(); }
  std::span<const Event> events() const noexcept { return events_; }
  const Event& operator[](std::size_t i) const { return events_[i]; }
  auto begin() const noexcept { return events_.begin(); }
  auto end() const noexcept { return events_.end(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<Event> events_;
};

// N-MNIST / N-Caltech101 5-byte record layout:
//   byte0 = x, byte1 = y, byte2 bit7 = polarity (1 -> ON),
//   byte2 bits 6..0 | byte3 | byte4 = 23-bit big-endian timestamp (us).
inline constexpr int kNmnistSize = 34;
inline constexpr std::int64_t kNmnistMaxTimestamp = (std::int64_t{1} << 23) - 1;

EventStream parse_nmnist_bin(std::span<const std::uint8_t> raw, int width = kNmnistSize, int height = kNmnistSize);
std::vector<std::uint8_t> encode_nmnist_bin(const EventStream& stream);
EventStream read_nmnist_file(const std::filesystem::path& path);

// Portable text format: "W H\n" followed by one "x y t p\n" record per event.
EventStream parse_portable(std::istream& in);
void write_portable(const EventStream& stream, std::ostream& out);
EventStream read_portable(const std::filesystem::path& path);
void write_portable(const EventStream& stream, const std::filesystem::path& path);

/// Events with start <= t < start + length, re-based so the window starts at t = 0.
EventStream extract_window(const EventStream& stream, std::int64_t start, std::int64_t length);

/// Parameters of the synthetic moving-shape generator.
struct SynthParams {
  int class_id = 0;
  std::uint64_t seed = 0;
  std::int64_t duration_us = 100'000;
  int width = kNmnistSize;
  int height = kNmnistSize;
  double rate = 60.0;            ///< expected events per millisecond (signal + noise)
  double noise_fraction = 0.05;  ///< share of `rate` emitted as uniform background noise
};

inline constexpr int kNumShapes = 5;

/// Name of the contour shape for a class id: bar, circle, cross, square, triangle.
std::string_view shape_name(int class_id);

/// Renders a filled shape moving along its class-specific path and emits an event
/// wherever a pixel's occupancy changes (ON when entering the shape, OFF when leaving).
/// The same parameters always produce the same stream.
EventStream synth_moving_shape(const SynthParams& params);

}  // namespace evg
