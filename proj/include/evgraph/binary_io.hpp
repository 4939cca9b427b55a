#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "evgraph/errors.hpp"

// Little-endian scalar helpers shared by the graph container, checkpoints and
// tensor dumps.
namespace evg::io {

template <typename T>
  requires std::is_integral_v<T>
void write_le(std::ostream& out, T value) {
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((u >> (8 * i)) & 0xff);
  out.write(buf, sizeof(T));
}

inline void write_le(std::ostream& out, double value) { write_le(out, std::bit_cast<std::uint64_t>(value)); }

template <typename T>
  requires std::is_integral_v<T>
T read_le(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  unsigned char buf[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(buf), sizeof(T))) throw ParseError("unexpected end of binary data");
  U u = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(static_cast<U>(buf[i]) << (8 * i));
  return static_cast<T>(u);
}

inline double read_f64(std::istream& in) { return std::bit_cast<double>(read_le<std::uint64_t>(in)); }

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t max_len = 1u << 24) {
  const auto n = read_le<std::uint32_t>(in);
  if (n > max_len) throw ParseError("string length " + std::to_string(n) + " exceeds limit");
  std::string s(n, '\0');
  if (n && !in.read(s.data(), n)) throw ParseError("unexpected end of binary data");
  return s;
}

inline void expect_magic(std::istream& in, const char (&magic)[9]) {
  char buf[8];
  if (!in.read(buf, 8) || std::string(buf, 8) != std::string(magic, 8)) {
    throw ParseError(std::string("bad magic, expected ") + magic);
  }
}

}  // namespace evg::io
