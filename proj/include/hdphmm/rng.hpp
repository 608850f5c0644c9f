#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace hdphmm {

/// Seeded random stream. Identical (seed, stream) and call sequence give
/// identical outputs on any platform: the engine is the fully specified
/// std::mt19937_64 and all variates are derived from raw 64-bit draws
/// rather than implementation-defined <random> distributions.
///
/// A handle is owned by one consumer at a time; parallel work splits off
/// child streams with split(), so results do not depend on scheduling.
class RngHandle {
 public:
  explicit RngHandle(std::uint64_t seed, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffULL),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream & 0xffffffffULL),
                      static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent child stream; derived deterministically from this
  /// handle's identity and its split counter.
  RngHandle split() {
    std::uint64_t child = mix(stream_ ^ mix(++n_splits_));
    return RngHandle(seed_, child);
  }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1): top 53 bits of the raw draw.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform on (0, 1), never exactly 0.
  double uniform_pos() {
    double u;
    do {
      u = uniform();
    } while (u <= 0.0);
    return u;
  }

  /// Standard normal via the polar method (no cached second value, so the
  /// call sequence alone determines the stream position).
  double normal() {
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) {
        return u * std::sqrt(-2.0 * std::log(s) / s);
      }
    }
  }

 private:
  static std::uint64_t mix(std::uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t n_splits_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace hdphmm
