#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

namespace tcgl::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big,
              "mixed-endian platforms are not supported");

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) out = (out << 8) | ((v >> (8 * i)) & 0xFF);
    return out;
  }
}

template <typename V>
using bits_of = std::conditional_t<sizeof(V) == 8, std::uint64_t, std::conditional_t<sizeof(V) == 4, std::uint32_t, void>>;

/// Appends `v` in little-endian byte order.
template <typename V>
void put(std::vector<unsigned char>& buf, V v) {
  using U = bits_of<V>;
  const U u = to_little(std::bit_cast<U>(v));
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &u, sizeof(U));
  buf.insert(buf.end(), bytes, bytes + sizeof(U));
}

template <typename V>
V get(const unsigned char* p) {
  using U = bits_of<V>;
  U u;
  std::memcpy(&u, p, sizeof(U));
  return std::bit_cast<V>(to_little(u));
}

inline void write_all(std::ostream& os, const std::vector<unsigned char>& buf, const std::string& what) {
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!os) throw std::runtime_error("write failed: " + what);
}

inline std::vector<unsigned char> read_all(std::istream& is) {
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline std::uint32_t crc32(const unsigned char* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(::crc32(crc, data, static_cast<uInt>(n)));
}

}  // namespace tcgl::io
