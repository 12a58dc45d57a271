#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace distilforge {

// SHA-256 digests bind datasets, caches, checkpoints and reports together.
using Hash32 = std::array<uint8_t, 32>;

std::string to_hex(const Hash32& h);
Hash32 hash_from_hex(std::string_view hex);  // FormatError on malformed input

class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(const void* data, size_t len);
  void update(std::string_view bytes) { update(bytes.data(), bytes.size()); }
  Hash32 finish();

 private:
  void* ctx_;
};

Hash32 sha256(std::string_view bytes);
Hash32 sha256(std::span<const uint8_t> bytes);

}  // namespace distilforge
