#pragma once

#include <algorithm>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace fedasmu {

using Rng = std::mt19937_64;

/// splitmix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Fold a list of identifiers into one seed, e.g. (run seed, device, round).
constexpr std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = 0x243f6a8885a308d3ULL;
  for (auto p : parts)
    h = mix_seed(h ^ mix_seed(p));
  return h;
}

/// Stream tags so that distinct consumers of one run seed never collide.
enum class Stream : std::uint64_t {
  partition = 1,
  profiles = 2,
  model_init = 3,
  trigger = 4,
  device_round = 5,
  selector = 6,
  fedavg_sample = 7,
};

inline Rng make_rng(std::uint64_t seed, Stream s,
                    std::uint64_t a = 0, std::uint64_t b = 0) {
  return Rng(derive_seed({seed, static_cast<std::uint64_t>(s), a, b}));
}

/// Uniform double in [0, 1) with a fixed, library-independent mapping.
inline double uniform01(Rng &rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Uniform integer in [0, n) via rejection; avoids implementation-defined
/// std::uniform_int_distribution so streams are portable.
inline std::uint64_t uniform_index(Rng &rng, std::uint64_t n) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return r % n;
}

/// Fisher-Yates with uniform_index.
template <typename It>
void shuffle(It first, It last, Rng &rng) {
  const auto n = static_cast<std::uint64_t>(last - first);
  for (std::uint64_t i = n; i > 1; --i) {
    auto j = uniform_index(rng, i);
    std::iter_swap(first + (i - 1), first + j);
  }
}

} // namespace fedasmu
