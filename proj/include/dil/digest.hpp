#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace dil {

// FNV-1a over raw bytes. Used for bit-identity checks on parameters
// (freeze verification, determinism tests) and checkpoint payload integrity.
inline uint64_t fnv1a64(const void* data, size_t n,
                        uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

template <typename T>
inline uint64_t digest_values(std::span<const T> values,
                              uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a64(values.data(), values.size() * sizeof(T), h);
}

}  // namespace dil
