#pragma once

#include <cstdint>
#include <string_view>

namespace persona {

// splitmix64 step; used to derive independent child seeds from one master
// seed so parallel work cannot change results.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t salt) {
  return splitmix64(master ^ splitmix64(salt));
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
  return derive_seed(master, fnv1a(tag));
}

}  // namespace persona
