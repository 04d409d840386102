#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "planrl/error.hpp"

// Little-endian primitive encoding shared by every binary file format.
namespace planrl::io {

template <typename T>
T to_little(T value) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return value;
  }
}

inline void write_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void write_u32(std::ostream& os, std::uint32_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_u64(std::ostream& os, std::uint64_t v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_f64(std::ostream& os, double v) { write_u64(os, std::bit_cast<std::uint64_t>(v)); }

inline void write_bytes(std::ostream& os, std::string_view s) { os.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline void write_string(std::ostream& os, std::string_view s) {
  write_u32(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s);
}

inline void require(std::istream& is, const char* what) {
  if (!is) throw Error(ErrorCode::format, std::string("truncated input while reading ") + what);
}

inline std::uint8_t read_u8(std::istream& is) {
  char c = 0;
  is.get(c);
  require(is, "u8");
  return static_cast<std::uint8_t>(c);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u32");
  return to_little(v);
}

inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(is, "u64");
  return to_little(v);
}

inline double read_f64(std::istream& is) { return std::bit_cast<double>(read_u64(is)); }

inline std::string read_bytes(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  is.read(s.data(), static_cast<std::streamsize>(n));
  require(is, "bytes");
  return s;
}

inline std::string read_string(std::istream& is) { return read_bytes(is, read_u32(is)); }

inline void expect_magic(std::istream& is, std::string_view magic) {
  if (read_bytes(is, magic.size()) != magic)
    throw Error(ErrorCode::format, "bad magic, expected " + std::string(magic));
}

/// Writes via a sibling temp file and renames, so readers never see a partial file.
template <typename Fn>
void write_file_atomic(const std::filesystem::path& path, Fn&& fill, bool binary = true) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
    if (!os) throw Error(ErrorCode::io, "cannot open for writing: " + path.string());
    fill(os);
    os.flush();
    if (!os) throw Error(ErrorCode::io, "write failed: " + path.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error(ErrorCode::io, "cannot rename into place: " + path.string());
  }
}

inline std::ifstream open_input(const std::filesystem::path& path, bool binary = true) {
  std::ifstream is(path, binary ? std::ios::binary : std::ios::in);
  if (!is) throw Error(ErrorCode::io, "cannot open for reading: " + path.string());
  return is;
}

}  // namespace planrl::io
