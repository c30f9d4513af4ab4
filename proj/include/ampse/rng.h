#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

namespace ampse {

/// Splittable seeded random generator.
///
/// Streams are identified by a (seed, path) pair: split(i) derives a child
/// stream whose draws are reproducible regardless of what any sibling draws.
/// Instances are single-owner; concurrency is achieved by splitting, never by
/// sharing one instance across threads.
class SplitRng {
 public:
  SplitRng() : SplitRng(0) {}
  explicit SplitRng(std::uint64_t seed);

  /// Child stream for integer index `i`.
  SplitRng split(std::uint64_t i) const;
  /// Child stream for a named sub-entity ("design", "labels", ...).
  SplitRng split(std::string_view name) const;

  std::uint64_t next_u64() { return gen_(); }
  double uniform() { return unif_(gen_); }   // [0, 1)
  double normal() { return normal_(gen_); }  // N(0, 1)

  void fill_normal(std::span<double> out) {
    for (double& x : out) x = normal_(gen_);
  }

  std::uint64_t stream_id() const { return stream_; }

 private:
  explicit SplitRng(std::uint64_t stream, int);

  std::uint64_t stream_;
  std::mt19937_64 gen_;
  std::uniform_real_distribution<double> unif_{0.0, 1.0};
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace ampse
