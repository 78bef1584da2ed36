#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "knnel/core.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian only");

namespace knnel::bin {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline void read_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n) {
    throw InvalidInputError("corrupt-store", std::string("truncated file while reading ") + what);
  }
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
  T v;
  read_bytes(is, &v, sizeof(T), what);
  return v;
}

inline std::string read_str(std::istream& is, const char* what) {
  auto len = read_pod<std::uint32_t>(is, what);
  std::string s(len, '\0');
  if (len > 0) read_bytes(is, s.data(), len, what);
  return s;
}

inline void check_magic(std::istream& is, const char expected[4], const char* format_name) {
  char magic[4];
  read_bytes(is, magic, 4, "magic");
  if (std::memcmp(magic, expected, 4) != 0) {
    throw InvalidInputError("corrupt-store",
                            std::string("bad magic; not a ") + format_name + " file");
  }
}

inline void check_version(std::uint32_t got, std::uint32_t expected, const char* format_name) {
  if (got != expected) {
    throw InvalidInputError("version-mismatch",
                            std::string(format_name) + " file version " + std::to_string(got) +
                                " but this build reads version " + std::to_string(expected));
  }
}

}  // namespace knnel::bin
