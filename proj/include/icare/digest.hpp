#pragma once

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "icare/common.hpp"
#include "icare/tensor.hpp"

namespace icare {

/// FNV-1a 64-bit running hash; chain calls by passing the previous value.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 14695981039346656037ULL) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t digest_bytes(const std::string& s) { return fnv1a64(s.data(), s.size()); }

template <typename S>
std::uint64_t digest_tensor(const Tensor<S>& t, std::uint64_t h = 14695981039346656037ULL) {
  return fnv1a64(t.data(), sizeof(S) * static_cast<std::size_t>(t.size()), h);
}

inline std::uint64_t digest_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for digest: " + path);
  std::uint64_t h = 14695981039346656037ULL;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    const std::streamsize got = f.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace icare
