#pragma once

#include <cstdint>
#include <random>

namespace dsar {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent seed streams.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Child seed for (parent, stream). Distinct streams of the same parent are
/// statistically independent, and adding a new stream never perturbs the
/// existing ones.
constexpr std::uint64_t derive_seed(std::uint64_t parent,
                                    std::uint64_t stream) noexcept {
  return mix64(mix64(parent) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

/// Named sub-streams used by the data generators and the harness.
enum class Stream : std::uint64_t {
  network = 1,
  covariates = 2,
  noise = 3,
  partition = 4,
  projection = 5,
  replicate = 6,
};

constexpr std::uint64_t derive_seed(std::uint64_t parent, Stream s) noexcept {
  return derive_seed(parent, static_cast<std::uint64_t>(s));
}

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32)};
  return Engine(seq);
}

}  // namespace dsar
