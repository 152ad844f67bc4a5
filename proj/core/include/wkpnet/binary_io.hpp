#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>

#include "wkpnet/error.hpp"

// Little-endian primitives shared by the IQ, feature and checkpoint formats.
namespace wkpnet::binary {

template <typename UInt>
UInt byteswap_if_big(UInt v) {
  if constexpr (std::endian::native == std::endian::big) {
    UInt r = 0;
    for (std::size_t i = 0; i < sizeof(UInt); ++i) r = (r << 8) | ((v >> (8 * i)) & 0xff);
    return r;
  }
  return v;
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u64(std::ostream& out, std::uint64_t v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f32(std::ostream& out, float f) { write_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline void write_f32s(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) write_f32(out, f);
  }
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline void check_stream(const std::istream& in, const char* what) {
  if (!in) fail(ErrorKind::Io, std::string("truncated or unreadable ") + what);
}

inline std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  check_stream(in, "uint32");
  return byteswap_if_big(v);
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  check_stream(in, "uint64");
  return byteswap_if_big(v);
}

inline void read_f32s(std::istream& in, std::span<float> values) {
  in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(values.size_bytes()));
  check_stream(in, "float32 payload");
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : values) f = std::bit_cast<float>(byteswap_if_big(std::bit_cast<std::uint32_t>(f)));
  }
}

inline std::string read_string(std::istream& in, std::size_t max_length = 1 << 16) {
  const std::uint32_t n = read_u32(in);
  if (n > max_length) fail(ErrorKind::Io, "string field too long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  check_stream(in, "string");
  return s;
}

}  // namespace wkpnet::binary
