#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "distilforge/errors.hpp"

namespace distilforge {

// Little-endian byte buffer helpers for the on-disk container formats.
// All formats are explicitly little-endian regardless of host order.

class ByteWriter {
 public:
  void put_u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void put_u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void put_u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void put_f64(double v) { put_u64(std::bit_cast<uint64_t>(v)); }
  void put_bytes(std::string_view b) { buf_.append(b); }
  void put_bytes(const void* data, size_t len) { buf_.append(static_cast<const char*>(data), len); }

  const std::string& bytes() const { return buf_; }
  std::string take() { return std::move(buf_); }
  size_t size() const { return buf_.size(); }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  uint8_t get_u8() { return static_cast<uint8_t>(need(1)[0]); }
  uint32_t get_u32() {
    const char* p = need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
  }
  uint64_t get_u64() {
    const char* p = need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get_u64()); }
  std::string_view get_bytes(size_t len) { return {need(len), len}; }

  size_t pos() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  const char* need(size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("container truncated: wanted " + std::to_string(n) + " bytes at offset " + std::to_string(pos_));
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::string_view bytes_;
  size_t pos_ = 0;
};

}  // namespace distilforge
