#pragma once

#include <atomic>
#include <cstddef>

namespace ampse::alloc_stats {

// Byte counters for the large numeric buffers (TallMatrix / DesignMatrix
// storage). Used by tests and run summaries to verify memory bounds, e.g.
// that the matrix-free engine never materializes an n x d array.

struct Snapshot {
  std::size_t current_bytes;
  std::size_t peak_bytes;
  std::size_t max_single_alloc;
};

void record_alloc(std::size_t bytes);
void record_free(std::size_t bytes);

Snapshot snapshot();

/// Resets the peak to the current level and clears max_single_alloc.
void reset_peak();

}  // namespace ampse::alloc_stats
