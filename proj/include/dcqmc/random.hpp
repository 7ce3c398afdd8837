#pragma once

// Counter-based random stream (Philox4x32-10) plus the handful of
// distributions the library needs. The distributions are written out here
// instead of taken from <random> so traces are bit-identical across
// standard library implementations.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <utility>
#include <vector>

namespace dcqmc {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// Mixes a base seed with a tag into an independent child seed.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  return splitmix64(seed ^ splitmix64(tag + 0x632BE59BD9B4E019ull));
}

template <class... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) noexcept {
  return derive_seed(derive_seed(seed, tag), static_cast<std::uint64_t>(rest)...);
}

class Philox4x32 {
 public:
  using result_type = std::uint32_t;

  struct State {
    std::uint64_t key = 0;
    std::uint64_t stream = 0;
    std::uint64_t block = 0;
    std::uint32_t position = 4;
    bool operator==(const State&) const = default;
  };

  explicit Philox4x32(std::uint64_t seed = 0, std::uint64_t stream = 0) noexcept {
    state_.key = seed;
    state_.stream = stream;
  }

  static constexpr result_type min() noexcept { return 0; }
  static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }

  result_type operator()() noexcept {
    if (state_.position >= 4) {
      buffer_ = generate_block(state_.block++);
      state_.position = 0;
    }
    return buffer_[state_.position++];
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t hi = (*this)();
    const std::uint64_t lo = (*this)();
    return (hi << 32) | lo;
  }

  const State& state() const noexcept { return state_; }

  void set_state(const State& s) noexcept {
    state_ = s;
    if (state_.position < 4) buffer_ = generate_block(state_.block - 1);
  }

 private:
  std::array<std::uint32_t, 4> generate_block(std::uint64_t block) const noexcept {
    constexpr std::uint32_t kM0 = 0xD2511F53u, kM1 = 0xCD9E8D57u;
    constexpr std::uint32_t kW0 = 0x9E3779B9u, kW1 = 0xBB67AE85u;
    std::array<std::uint32_t, 4> ctr{static_cast<std::uint32_t>(block),
                                     static_cast<std::uint32_t>(block >> 32),
                                     static_cast<std::uint32_t>(state_.stream),
                                     static_cast<std::uint32_t>(state_.stream >> 32)};
    std::uint32_t k0 = static_cast<std::uint32_t>(state_.key);
    std::uint32_t k1 = static_cast<std::uint32_t>(state_.key >> 32);
    for (int round = 0; round < 10; ++round) {
      const std::uint64_t p0 = static_cast<std::uint64_t>(kM0) * ctr[0];
      const std::uint64_t p1 = static_cast<std::uint64_t>(kM1) * ctr[2];
      const auto hi0 = static_cast<std::uint32_t>(p0 >> 32), lo0 = static_cast<std::uint32_t>(p0);
      const auto hi1 = static_cast<std::uint32_t>(p1 >> 32), lo1 = static_cast<std::uint32_t>(p1);
      ctr = {hi1 ^ ctr[1] ^ k0, lo1, hi0 ^ ctr[3] ^ k1, lo0};
      k0 += kW0;
      k1 += kW1;
    }
    return ctr;
  }

  State state_;
  std::array<std::uint32_t, 4> buffer_{};
};

using Rng = Philox4x32;

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) noexcept {
  return static_cast<double>(rng.next_u64() >> 11) * 0x1.0p-53;
}

inline double uniform(Rng& rng, double lo, double hi) noexcept {
  return lo + (hi - lo) * uniform01(rng);
}

/// Unbiased integer in [0, n). n must be positive.
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) noexcept {
  // Lemire's multiply-and-reject.
  std::uint64_t x = rng.next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      x = rng.next_u64();
      m = static_cast<__uint128_t>(x) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

/// Standard normal via Box-Muller; consumes two uniforms per draw.
inline double standard_normal(Rng& rng) noexcept {
  double u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace dcqmc
