#pragma once

#include <openssl/sha.h>

#include <array>
#include <cstdint>
#include <string>

namespace krls {

using Hash256 = std::array<std::uint8_t, 32>;

inline Hash256 sha256(const std::string& data) {
  Hash256 out{};
  SHA256(reinterpret_cast<const unsigned char*>(data.data()), data.size(), out.data());
  return out;
}

inline std::string hex(const Hash256& h) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  s.reserve(64);
  for (auto b : h) {
    s.push_back(digits[b >> 4]);
    s.push_back(digits[b & 0xf]);
  }
  return s;
}

}  // namespace krls
