#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace selecmix {

/// Consumers that draw random numbers. Each gets an independent stream so
/// that enabling one feature never shifts the draws of another.
enum class Stream : std::uint64_t {
  Data = 1,
  Noise = 2,
  Init = 3,
  AuxInit = 4,
  Order = 5,
  Mixing = 6,
  Pretrain = 7,
  Probe = 8,
  PairStats = 9,
  Pattern = 10,
  EvalUnbiased = 11,
  EvalConflict = 12,
};

/// xoshiro256** seeded through splitmix64.
///
/// The state expansion and output function follow the reference
/// implementation by Blackman and Vigna, so a given seed yields the same
/// 64-bit stream on every platform. uniform() maps the top 53 bits to
/// [0, 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) noexcept;
  Rng(std::uint64_t seed, Stream stream) noexcept;

  std::uint64_t next_u64() noexcept;

  /// Uniform on the half-open interval [0, 1).
  double uniform() noexcept;

  /// Uniform integer in [0, n). n must be positive.
  std::size_t uniform_index(std::size_t n) noexcept;

  /// Standard normal via Box-Muller; the second variate is cached.
  double normal() noexcept;

  template <typename T>
  void shuffle(std::span<T> values) noexcept {
    for (std::size_t i = values.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(values[i - 1], values[j]);
    }
  }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

}  // namespace selecmix
