#pragma once

#include <cstdint>
#include <random>

namespace fairdistill {

/// Independent streams derived from one user seed, so that e.g. changing the
/// dropout pattern never perturbs parameter initialization.
enum class Stream : std::uint64_t {
  kGraph = 1,
  kSplit = 2,
  kInit = 3,
  kDropout = 4,
  kProxy = 5,
  kTest = 6,
};

inline std::mt19937_64 make_rng(std::uint64_t seed, Stream stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace fairdistill
