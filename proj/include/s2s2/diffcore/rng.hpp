#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace s2s2 {

/// Named substreams derived from one root seed. Changing the seed of one
/// stage never perturbs the draws of another.
enum class Stream : std::uint64_t {
  init = 1,
  data = 2,
  sampling = 3,
  shuffle = 4,
  verify = 5,
};

namespace detail {

inline constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

/// xoshiro256** keyed by (seed, stream), state expanded with SplitMix64.
/// Integer-only and identical on every platform. Normal deviates use the
/// Marsaglia polar method (sqrt and log only).
class Rng {
 public:
  static constexpr std::string_view algorithm = "xoshiro256** / splitmix64 seeding / polar normal";

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept
      : seed_(seed), stream_(stream) {
    std::uint64_t sm = seed;
    const std::uint64_t seed_key = detail::splitmix64(sm);
    std::uint64_t st = stream ^ 0xD1B54A32D192ED03ULL;
    const std::uint64_t stream_key = detail::splitmix64(st);
    std::uint64_t mix = seed_key ^ detail::rotl(stream_key, 23);
    for (auto& s : state_) s = detail::splitmix64(mix);
  }

  Rng(std::uint64_t seed, Stream stream) noexcept
      : Rng(seed, static_cast<std::uint64_t>(stream)) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream() const noexcept { return stream_; }

  /// Child generator keyed by (seed, hash(stream, id)); independent of how
  /// many values this generator has already produced.
  Rng substream(std::uint64_t id) const noexcept {
    std::uint64_t k = stream_ * 0x2545F4914F6CDD1DULL + id;
    return Rng(seed_, detail::splitmix64(k));
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n). n must be nonzero.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t state_[4]{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace s2s2
