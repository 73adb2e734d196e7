#ifndef FPSCREEN_RNG_HPP_
#define FPSCREEN_RNG_HPP_

#include <cstdint>
#include <random>

namespace fpscreen {

// splitmix64 finalizer; used to derive independent stream seeds from a base
// seed plus stream indices so that replicate r / restart s always sees the
// same stream regardless of execution order.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix64(base);
  s = mix64(s ^ mix64(a + 0x517cc1b727220a95ULL));
  s = mix64(s ^ mix64(b + 0x6c62272e07bb0142ULL));
  s = mix64(s ^ mix64(c + 0x27d4eb2f165667c5ULL));
  return s;
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
  return Rng(derive_seed(base, a, b, c));
}

}  // namespace fpscreen

#endif  // FPSCREEN_RNG_HPP_
