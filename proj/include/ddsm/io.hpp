#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <string_view>
#include <vector>

#include "ddsm/error.hpp"

namespace ddsm {

// splitmix64 finalizer; used to derive independent per-record, per-purpose
// seeds from one master seed without any shared generator state.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index, std::uint64_t stream) {
  return splitmix64(splitmix64(master) ^ splitmix64(index * 0x100000001b3ULL + stream));
}

class Fnv1a {
 public:
  void update(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= p[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  void update(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void update(std::uint64_t v) { put(v); }
  std::uint64_t value() const { return h_; }
  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 0; i < 16; ++i) s[15 - i] = digits[(h_ >> (4 * i)) & 0xf];
    return s;
  }

 private:
  void put(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    update(b, 8);
  }
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view bytes) {
  Fnv1a h;
  h.update(bytes);
  return h.hex();
}

// Little-endian binary encoding independent of the host byte order.
class ByteWriter {
 public:
  void raw(std::string_view s) { buf_.append(s); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }
  // Rank, dimensions, then the values.
  void array(const std::vector<std::uint64_t>& dims, const double* data) {
    u32(static_cast<std::uint32_t>(dims.size()));
    std::uint64_t count = 1;
    for (auto d : dims) {
      u64(d);
      count *= d;
    }
    for (std::uint64_t i = 0; i < count; ++i) f64(data[i]);
  }
  const std::string& bytes() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}
  std::string_view raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  double f64() { return std::bit_cast<double>(le(8)); }
  std::string str() {
    const auto n = u32();
    return std::string(raw(n));
  }
  std::vector<double> array(std::vector<std::uint64_t>& dims) {
    const auto rank = u32();
    if (rank > 8) throw IoError("corrupt array header");
    dims.assign(rank, 0);
    std::uint64_t count = 1;
    for (auto& d : dims) {
      d = u64();
      count *= d;
    }
    if (count > (data_.size() - pos_) / 8) throw IoError("truncated array");
    std::vector<double> v(count);
    for (auto& x : v) x = f64();
    return v;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw IoError("unexpected end of binary data");
  }
  std::uint64_t le(int n) {
    need(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace ddsm
