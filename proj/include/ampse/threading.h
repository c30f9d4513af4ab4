#pragma once

#include <cstdint>
#include <functional>

namespace ampse {

/// Worker count: `requested` if > 0, else hardware concurrency, capped by the
/// AMP_THREADS env var when set.
int resolve_threads(int requested = 0);

/// Runs body(block) for block in [0, num_blocks) on up to `threads` workers.
/// Blocks are claimed from a shared counter; bodies must write to disjoint
/// state (per-block slots) so results do not depend on scheduling.
void parallel_blocks(std::int64_t num_blocks,
                     const std::function<void(std::int64_t)>& body,
                     int threads = 0);

}  // namespace ampse
