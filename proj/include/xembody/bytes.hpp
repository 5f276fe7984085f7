#pragma once

// Little-endian primitives shared by the shard and checkpoint formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "xembody/errors.hpp"

namespace xembody::bytes {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f32(std::vector<std::uint8_t>& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline void put_string(std::vector<std::uint8_t>& out, const std::string& s) { out.insert(out.end(), s.begin(), s.end()); }

/// Bounds-checked cursor; every short read reports the offset it failed at.
class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n) {
      throw CorruptionError("truncated " + what + ": need " + std::to_string(n) + " bytes, have " +
                                std::to_string(remaining()),
                            pos_);
    }
  }

  std::uint32_t u32(const std::string& what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32(const std::string& what) { return std::bit_cast<float>(u32(what)); }

  std::string str(std::size_t n, const std::string& what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  /// Fills `n` floats into `dst` without per-element bounds checks.
  void f32_block(float* dst, std::size_t n, const std::string& what) {
    need(n * 4, what);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, data_.data() + pos_, n * 4);
      pos_ += n * 4;
    } else {
      for (std::size_t i = 0; i < n; ++i) dst[i] = f32(what);
    }
  }

 private:
  const std::vector<std::uint8_t>& data_;
  std::size_t pos_ = 0;
};

inline void put_f32_block(std::vector<std::uint8_t>& out, const float* src, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(src);
    out.insert(out.end(), p, p + n * 4);
  } else {
    for (std::size_t i = 0; i < n; ++i) put_f32(out, src[i]);
  }
}

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open '" + path + "' for reading");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::vector<std::uint8_t>& data, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) throw FileError("write to '" + path + "' failed");
}

}  // namespace xembody::bytes
