#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace ufad {

// FNV-1a, 64 bit. Stable across platforms, used for config and manifest digests.
inline std::uint64_t fnv1a64(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace ufad
