#pragma once

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace rcn {

// Little-endian binary primitives for the checkpoint and dataset containers.
// Reads throw on short files so truncation surfaces as a corruption error.

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw std::runtime_error("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n,
                       const std::string& what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw std::runtime_error("corrupt file: truncated while reading " + what);
}

template <typename T>
void write_pod(std::ostream& os, T v) {
  write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& what) {
  T v{};
  read_bytes(is, &v, sizeof(T), what);
  return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is, const std::string& what) {
  const auto n = read_pod<std::uint32_t>(is, what + " length");
  if (n > (1u << 24)) throw std::runtime_error("corrupt file: absurd " + what);
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

inline void expect_magic(std::istream& is, const char* magic,
                         const std::string& what) {
  char buf[9] = {0};
  read_bytes(is, buf, 8, what + " magic");
  if (std::string(buf, 8) != magic)
    throw std::runtime_error("not a " + what + " file (bad magic)");
}

}  // namespace rcn
