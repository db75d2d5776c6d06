#pragma once

#include <cstdint>
#include <vector>

namespace seelab {

/// Counter-based generator. Every draw is a pure function of
/// (seed, stream, counter), so a stream can be forked into independent
/// child streams without sharing state.
class Rng {
 public:
  Rng() = default;
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0) : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64();
  /// Uniform on the open interval (0, 1).
  double uniform();
  double normal();
  std::vector<double> gaussian(int dim);
  /// Uniform integer in [lo, hi].
  int uniform_int(int lo, int hi);

  /// Derives an independent child stream and advances this one by one draw.
  Rng fork();

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }
  std::uint64_t counter() const { return counter_; }
  static Rng restore(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter);

  bool operator==(const Rng&) const = default;

 private:
  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
};

/// Standard-normal draws of length `dim`.
std::vector<double> gaussian_sample(Rng& rng, int dim);

}  // namespace seelab
