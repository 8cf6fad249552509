#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>

namespace cstonet {

// SplitMix64 as a UniformRandomBitGenerator. Seeding is a single word, so a
// fresh stream per (sample, epoch, sweep) costs nothing; std::mt19937_64 would
// spend more time seeding than sampling at that granularity.
class SplitMix64 {
 public:
  using result_type = std::uint64_t;

  explicit SplitMix64(std::uint64_t seed = 0) : state_(seed) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

// Mixes a root seed with a tuple of stream coordinates into a child seed.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = root ^ 0x6a09e667f3bcc909ULL;
  for (std::uint64_t c : coords) {
    SplitMix64 mix(h ^ (c + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2)));
    h = mix();
  }
  return h;
}

inline SplitMix64 make_stream(std::uint64_t root, std::initializer_list<std::uint64_t> coords) {
  return SplitMix64(derive_seed(root, coords));
}

// Stream tags so that different consumers of the same seed never collide.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kShuffle = 2;
inline constexpr std::uint64_t kImpute = 3;
inline constexpr std::uint64_t kRun = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kMissing = 6;
}  // namespace stream

}  // namespace cstonet
