#pragma once

#include <cstdint>
#include <random>

namespace mbw {

using Rng = std::mt19937_64;

/// Independent generator for (seed, stream). Streams are keyed only by their
/// indices, never by scheduling order, so parallel and serial runs draw the
/// same numbers.
inline Rng make_stream(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t substream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream),
                    static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(substream),
                    static_cast<std::uint32_t>(substream >> 32),
                    0x6d627775u};
  return Rng(seq);
}

inline double uniform01(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double std_normal(Rng& rng) {
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace mbw
