#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "msfm/numerics/error.hpp"
#include "msfm/numerics/tensor.hpp"

// Versioned binary tensor container:
//
//   magic    8 bytes  "MSFMTNSR"
//   version  u32
//   count    u64
//   count x { name_len u32, name bytes, rank u32, extents u64[rank], payload f64[numel] }
//   crc32    u32 over every preceding byte
//
// All integers and floats little-endian.
namespace msfm::io {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

inline constexpr char kMagic[8] = {'M', 'S', 'F', 'M', 'T', 'N', 'S', 'R'};
inline constexpr std::uint32_t kFormatVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

template <typename T>
void put(std::vector<unsigned char>& out, T v) {
  const auto* p = reinterpret_cast<const unsigned char*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  Reader(const std::vector<unsigned char>& buf, std::size_t end, const std::string& origin)
      : buf_(buf), end_(end), origin_(origin) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void bytes(void* dst, std::size_t n) {
    need(n);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t remaining() const { return end_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > end_ - pos_) throw DataError(origin_ + ": truncated container");
  }
  const std::vector<unsigned char>& buf_;
  std::size_t end_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc(const unsigned char* p, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

inline std::vector<unsigned char> encode(const NamedTensors& tensors) {
  std::vector<unsigned char> out(std::begin(kMagic), std::end(kMagic));
  detail::put<std::uint32_t>(out, kFormatVersion);
  detail::put<std::uint64_t>(out, tensors.size());
  for (const auto& [name, t] : tensors) {
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put<std::uint64_t>(out, e);
    const auto* p = reinterpret_cast<const unsigned char*>(t.ptr());
    out.insert(out.end(), p, p + t.numel() * sizeof(double));
  }
  detail::put<std::uint32_t>(out, detail::crc(out.data(), out.size()));
  return out;
}

// `origin` labels error messages (a path, a location id, ...).
inline NamedTensors decode(const std::vector<unsigned char>& buf, const std::string& origin = "container") {
  if (buf.size() < sizeof(kMagic) + 4 + 8 + 4) throw DataError(origin + ": truncated container");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) throw DataError(origin + ": bad magic");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + sizeof(kMagic), 4);
  if (version != kFormatVersion)
    throw VersionMismatch(origin + ": container version " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
  const std::size_t body = buf.size() - 4;
  std::uint32_t stored;
  std::memcpy(&stored, buf.data() + body, 4);
  if (stored != detail::crc(buf.data(), body)) throw DataError(origin + ": checksum mismatch");

  detail::Reader r(buf, body, origin);
  r.get<std::uint64_t>();  // magic
  r.get<std::uint32_t>();  // version
  const auto count = r.get<std::uint64_t>();
  NamedTensors out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>();
    std::string name(len, '\0');
    r.bytes(name.data(), len);
    const auto rank = r.get<std::uint32_t>();
    Shape shape(rank);
    for (auto& e : shape) {
      e = r.get<std::uint64_t>();
      if (e == 0) throw DataError(origin + ": zero extent in tensor '" + name + "'");
    }
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / sizeof(double)) throw DataError(origin + ": truncated container");
    std::vector<double> data(n);
    r.bytes(data.data(), n * sizeof(double));
    out.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  if (r.remaining() != 0) throw DataError(origin + ": trailing bytes after last tensor");
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open '" + path.string() + "' for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DataError("write failed for '" + path.string() + "'");
}

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open '" + path.string() + "'");
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>());
}

inline void save(const std::filesystem::path& path, const NamedTensors& tensors) { write_file(path, encode(tensors)); }

inline NamedTensors load(const std::filesystem::path& path, const std::string& origin = "") {
  return decode(read_file(path), origin.empty() ? path.string() : origin);
}

}  // namespace msfm::io
