#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace lvg {

// splitmix64; used to derive independent substream seeds from (seed, tags...).
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return mix64(seed ^ mix64(tag));
}

template <typename... Tags>
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) {
  return derive_seed(derive_seed(seed, tag), rest...);
}

// Stream tags for the pipeline; each consumer owns one so seeds never collide.
namespace stream {
constexpr std::uint64_t corpus = 0x11;
constexpr std::uint64_t init = 0x22;
constexpr std::uint64_t train = 0x33;
constexpr std::uint64_t convert = 0x44;
constexpr std::uint64_t eval = 0x55;
}  // namespace stream

// Deterministic RNG. Gaussian draws use Box-Muller on explicitly mapped
// uniforms instead of std::normal_distribution, whose output is
// implementation-defined; runs must be byte-reproducible.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe as a log argument.
  double uniform_pos() {
    return static_cast<double>((engine_() >> 11) + 1) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive integer range.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(engine_() % span);
  }

  double normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  Rng fork(std::uint64_t tag) { return Rng(derive_seed(engine_(), tag)); }

 private:
  std::mt19937_64 engine_;
};

}  // namespace lvg
