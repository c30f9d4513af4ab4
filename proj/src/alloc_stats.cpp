#include "ampse/alloc_stats.h"

namespace ampse::alloc_stats {

namespace {

std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_max_single{0};

void bump_max(std::atomic<std::size_t>& slot, std::size_t value) {
  std::size_t seen = slot.load(std::memory_order_relaxed);
  while (seen < value &&
         !slot.compare_exchange_weak(seen, value, std::memory_order_relaxed)) {
  }
}

}  // namespace

void record_alloc(std::size_t bytes) {
  const std::size_t now =
      g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  bump_max(g_peak, now);
  bump_max(g_max_single, bytes);
}

void record_free(std::size_t bytes) {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

Snapshot snapshot() {
  return {g_current.load(std::memory_order_relaxed),
          g_peak.load(std::memory_order_relaxed),
          g_max_single.load(std::memory_order_relaxed)};
}

void reset_peak() {
  g_peak.store(g_current.load(std::memory_order_relaxed),
               std::memory_order_relaxed);
  g_max_single.store(0, std::memory_order_relaxed);
}

}  // namespace ampse::alloc_stats
