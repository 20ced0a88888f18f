#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rqr {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
  return splitmix64(base ^ splitmix64(salt + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : tag) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Independent named substream of a run seed. Streams with different tags or
// salts never share state, so adding a consumer cannot shift another stream.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::string_view tag,
                                   std::uint64_t salt = 0) {
  return std::mt19937_64(mix_seed(mix_seed(seed, tag_hash(tag)), salt));
}

// 53-bit mantissa uniform in [0,1); identical across platforms for a fixed
// engine state, unlike std::uniform_real_distribution.
inline double uniform01(std::mt19937_64& g) {
  return static_cast<double>(g() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& g, double lo, double hi) {
  return lo + (hi - lo) * uniform01(g);
}

}  // namespace rqr
