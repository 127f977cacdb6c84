#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace flop {

/// SplitMix64 finalizer. Used to expand seeds and to hash stream ids.
std::uint64_t splitmix64(std::uint64_t& state);

/// Derives an independent stream seed from (global seed, component tag,
/// index). Components in use: "partition", "split", "init", "batch",
/// "sampler", "synthetic".
std::uint64_t derive_seed(std::uint64_t global_seed, std::string_view tag,
                          std::uint64_t index = 0);

/// xoshiro256** generator. All draws are defined in terms of next_u64 so a
/// given seed yields the same sequence on every platform and thread count.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng(std::uint64_t global_seed, std::string_view tag, std::uint64_t index = 0)
      : Rng(derive_seed(global_seed, tag, index)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64();

  /// Uniform in [0, 1) with 53 random bits.
  double uniform();

  /// Uniform integer in [0, n). Unbiased (rejection on the top range).
  std::uint64_t below(std::uint64_t n);

  /// Standard normal via Box-Muller; consumes exactly two uniforms per call.
  double normal();

  /// Fisher-Yates shuffle, swapping from the back.
  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> s_{};
};

}  // namespace flop
