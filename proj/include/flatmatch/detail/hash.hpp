#pragma once

#include <cstdint>
#include <string_view>

namespace flatmatch::detail {

// FNV-1a, 64-bit. Stable across platforms; used for feature hashing and
// anonymization tokens, never for security.
inline std::uint64_t fnv1a64(std::string_view bytes,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  std::uint64_t h = seed;
  for (unsigned char c : bytes) {
    h ^= static_cast<std::uint64_t>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace flatmatch::detail
