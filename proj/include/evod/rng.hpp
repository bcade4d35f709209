#pragma once

#include <cstdint>
#include <random>

namespace evod {

/// Deterministic random stream identified by (seed, stream id).
///
/// The engine is a 64-bit Mersenne Twister initialised through std::seed_seq,
/// whose output is fully specified by the standard, so draws do not depend on
/// the standard library vendor. Variates are produced with explicit formulas
/// for the same reason.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint32_t stream = 0);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint32_t stream() const noexcept { return stream_; }

  /// Independent stream sharing this seed.
  RngStream derive(std::uint32_t stream) const { return RngStream(seed_, stream); }

  std::uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1).
  double uniform();
  /// Uniform on (0, 1].
  double uniform_pos() { return 1.0 - uniform(); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double exponential(double rate);
  /// Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t seed_;
  std::uint32_t stream_;
  std::mt19937_64 engine_;
};

}  // namespace evod
