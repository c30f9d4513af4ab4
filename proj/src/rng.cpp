#include "ampse/rng.h"

namespace ampse {

namespace {

// SplitMix64 finalizer; full-avalanche mixing for stream derivation.
std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::uint64_t combine(std::uint64_t stream, std::uint64_t child) {
  return mix64(stream ^ mix64(child + 0x246c1f3715a92c7bULL));
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

SplitRng::SplitRng(std::uint64_t seed)
    : stream_(mix64(seed)), gen_(stream_) {}

SplitRng::SplitRng(std::uint64_t stream, int) : stream_(stream), gen_(stream) {}

SplitRng SplitRng::split(std::uint64_t i) const {
  return SplitRng(combine(stream_, i), 0);
}

SplitRng SplitRng::split(std::string_view name) const {
  return SplitRng(combine(stream_, fnv1a64(name)), 0);
}

}  // namespace ampse
