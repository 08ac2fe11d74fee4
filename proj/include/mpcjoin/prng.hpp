#pragma once

// SplitMix64-based deterministic randomness. Everything seeded in the library
// goes through these functions so instances and hash functions are
// reproducible bit-for-bit across platforms and standard libraries.
//
//   mix64(x):           SplitMix64 finalizer
//                        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9;
//                        x ^= x >> 27; x *= 0x94d049bb133111eb; x ^= x >> 31
//   stream_key(s, id):  mix64(s + 0x9e3779b97f4a7c15 * (id + 1))
//   draw(s, id, c):     mix64(stream_key(s, id) + 0x9e3779b97f4a7c15 * (c + 1))
//   bounded(x, n):      high 64 bits of x * n  (multiply-high range reduction)

#include <cstdint>
#include <vector>

namespace mpcjoin {

inline constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) { return mix64(seed + kGolden * (stream + 1)); }

/// Counter-based draw: value number `counter` of stream `stream`.
constexpr std::uint64_t draw(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
  return mix64(stream_key(seed, stream) + kGolden * (counter + 1));
}

/// Maps a uniform 64-bit word to [0, n).
constexpr std::uint64_t bounded(std::uint64_t x, std::uint64_t n) {
  return static_cast<std::uint64_t>((static_cast<unsigned __int128>(x) * n) >> 64);
}

/// Stream identifier for (relation, attribute) pairs.
constexpr std::uint64_t attribute_stream(std::uint64_t relation, std::uint64_t attribute) {
  return (relation << 16) | attribute;
}

/// Sequential view of one stream.
class StreamRng {
 public:
  StreamRng(std::uint64_t seed, std::uint64_t stream) : key_(stream_key(seed, stream)) {}
  std::uint64_t next() { return mix64(key_ + kGolden * ++counter_); }
  std::uint64_t below(std::uint64_t n) { return bounded(next(), n); }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Fisher-Yates permutation of [1, n].
inline std::vector<std::uint64_t> random_permutation(std::uint64_t n, StreamRng& rng) {
  std::vector<std::uint64_t> v(n);
  for (std::uint64_t i = 0; i < n; ++i) v[i] = i + 1;
  for (std::uint64_t i = n; i > 1; --i) {
    std::uint64_t j = rng.below(i);
    std::swap(v[i - 1], v[j]);
  }
  return v;
}

}  // namespace mpcjoin
