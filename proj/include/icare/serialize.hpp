#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "icare/params.hpp"
#include "icare/tensor.hpp"

namespace icare {

/// Binary record container used for checkpoints (magic "ICRE") and raster
/// tensor files (magic "ICRT").
///
/// Layout: 4 magic bytes, u16 LE format version, then records until EOF.
/// Record: u32 LE name length, UTF-8 name, u8 dtype (0 = f64, 1 = f32,
/// 2 = raw bytes), u8 rank, rank u64 LE extents, payload (little-endian
/// scalars, or the bytes themselves for dtype 2). Round-trips bit-exactly.
namespace records {

constexpr std::uint16_t kFormatVersion = 1;
constexpr std::uint8_t kDtypeF64 = 0;
constexpr std::uint8_t kDtypeF32 = 1;
constexpr std::uint8_t kDtypeRaw = 2;

struct Record {
  std::string name;
  std::uint8_t dtype = kDtypeRaw;
  Shape shape;
  std::vector<std::uint8_t> payload;
};

namespace detail {

inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class ByteCursor {
 public:
  ByteCursor(const std::uint8_t* data, std::size_t size, std::string path)
      : data_(data), size_(size), path_(std::move(path)) {}

  bool at_end() const { return pos_ == size_; }

  void take(void* dst, std::size_t n) {
    if (pos_ + n > size_)
      throw IoError("truncated record file: " + path_);
    std::memcpy(dst, data_ + pos_, n);
    pos_ += n;
  }

  std::uint16_t u16() {
    std::uint8_t b[2];
    take(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    take(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    take(b, 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
  }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string path_;
};

inline std::size_t dtype_width(std::uint8_t dtype) {
  switch (dtype) {
    case kDtypeF64: return 8;
    case kDtypeF32: return 4;
    case kDtypeRaw: return 1;
    default: return 0;
  }
}

}  // namespace detail

inline void write_file(const std::string& path, const char magic[4],
                       const std::vector<Record>& recs,
                       std::uint16_t version = kFormatVersion) {
  std::string out;
  out.append(magic, 4);
  detail::put_u16(out, version);
  for (const Record& r : recs) {
    detail::put_u32(out, static_cast<std::uint32_t>(r.name.size()));
    out.append(r.name);
    out.push_back(static_cast<char>(r.dtype));
    out.push_back(static_cast<char>(r.shape.size()));
    for (Index e : r.shape) detail::put_u64(out, static_cast<std::uint64_t>(e));
    const std::size_t expect = static_cast<std::size_t>(shape_size(r.shape)) *
                               detail::dtype_width(r.dtype);
    if (expect != r.payload.size())
      throw IoError("record '" + r.name + "' payload size mismatch writing " + path);
    out.append(reinterpret_cast<const char*>(r.payload.data()), r.payload.size());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write: " + path);
}

inline std::vector<Record> read_file(const std::string& path, const char magic[4],
                                     std::uint16_t* version_out = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                                  std::istreambuf_iterator<char>());
  detail::ByteCursor cur(bytes.data(), bytes.size(), path);
  char got[4];
  cur.take(got, 4);
  if (std::memcmp(got, magic, 4) != 0)
    throw IoError("bad magic in " + path + " (expected " + std::string(magic, 4) + ")");
  const std::uint16_t version = cur.u16();
  if (version > kFormatVersion)
    throw IoError("unsupported format version " + std::to_string(version) + " in " + path);
  if (version_out) *version_out = version;

  std::vector<Record> recs;
  while (!cur.at_end()) {
    Record r;
    const std::uint32_t name_len = cur.u32();
    r.name.resize(name_len);
    cur.take(r.name.data(), name_len);
    cur.take(&r.dtype, 1);
    std::uint8_t rank = 0;
    cur.take(&rank, 1);
    if (detail::dtype_width(r.dtype) == 0)
      throw IoError("unknown dtype code in record '" + r.name + "' of " + path);
    r.shape.resize(rank);
    for (std::uint8_t i = 0; i < rank; ++i) r.shape[i] = static_cast<Index>(cur.u64());
    const std::size_t n = static_cast<std::size_t>(shape_size(r.shape)) *
                          detail::dtype_width(r.dtype);
    r.payload.resize(n);
    cur.take(r.payload.data(), n);
    recs.push_back(std::move(r));
  }
  return recs;
}

template <typename S>
Record from_tensor(const std::string& name, const Tensor<S>& t) {
  static_assert(std::is_same_v<S, double> || std::is_same_v<S, float>);
  Record r;
  r.name = name;
  r.dtype = std::is_same_v<S, double> ? kDtypeF64 : kDtypeF32;
  r.shape = t.shape();
  r.payload.resize(static_cast<std::size_t>(t.size()) * sizeof(S));
  std::memcpy(r.payload.data(), t.data(), r.payload.size());
  return r;
}

template <typename S>
Tensor<S> to_tensor(const Record& r) {
  static_assert(std::is_same_v<S, double> || std::is_same_v<S, float>);
  const std::uint8_t want = std::is_same_v<S, double> ? kDtypeF64 : kDtypeF32;
  if (r.dtype != want)
    throw IoError("record '" + r.name + "' has dtype code " + std::to_string(r.dtype) +
                  ", expected " + std::to_string(want));
  Tensor<S> t(r.shape.empty() ? Shape{1} : r.shape);
  if (r.shape.empty() && r.payload.size() != sizeof(S))
    throw IoError("record '" + r.name + "' scalar payload size mismatch");
  std::memcpy(t.data(), r.payload.data(), r.payload.size());
  return t;
}

inline Record from_string(const std::string& name, const std::string& text) {
  Record r;
  r.name = name;
  r.dtype = kDtypeRaw;
  r.shape = {static_cast<Index>(text.size())};
  r.payload.assign(text.begin(), text.end());
  return r;
}

inline std::string to_string(const Record& r) {
  if (r.dtype != kDtypeRaw)
    throw IoError("record '" + r.name + "' is not a raw byte record");
  return std::string(r.payload.begin(), r.payload.end());
}

inline const Record* find(const std::vector<Record>& recs, const std::string& name) {
  for (const Record& r : recs)
    if (r.name == name) return &r;
  return nullptr;
}

inline const Record& require(const std::vector<Record>& recs, const std::string& name,
                             const std::string& path) {
  const Record* r = find(recs, name);
  if (!r) throw IoError("record '" + name + "' missing from " + path);
  return *r;
}

}  // namespace records

inline constexpr char kCheckpointMagic[4] = {'I', 'C', 'R', 'E'};
inline constexpr char kRasterMagic[4] = {'I', 'C', 'R', 'T'};

}  // namespace icare
