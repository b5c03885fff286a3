#pragma once

#include <cstdint>
#include <iterator>
#include <utility>

namespace sldb {

inline constexpr std::uint64_t kDefaultSeed = 20240611;

/// Counter-based generator (SplitMix64 over seed + counter).
///
/// The full state is the (seed, counter) pair, so it serializes as two
/// integers and every draw sequence is identical on any platform. All
/// distributions are implemented here rather than taken from <random>,
/// whose distribution algorithms are implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = kDefaultSeed) : seed_(seed) {}
  static Rng restore(std::uint64_t seed, std::uint64_t counter) {
    Rng r(seed);
    r.counter_ = counter;
    return r;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n); n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Normal truncated to [mean - 2*stddev, mean + 2*stddev] by resampling.
  double truncated_normal(double mean, double stddev);
  double gamma(double shape);
  double beta(double a, double b);

  /// Independent stream keyed by `stream`; does not advance this generator.
  Rng derive(std::uint64_t stream) const;

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(std::distance(first, last));
    for (std::uint64_t i = n; i > 1; --i) {
      std::uint64_t j = uniform_int(i);
      using std::swap;
      swap(*(first + static_cast<std::ptrdiff_t>(i - 1)),
           *(first + static_cast<std::ptrdiff_t>(j)));
    }
  }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace sldb
