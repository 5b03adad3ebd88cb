#pragma once

#include <cstddef>
#include <functional>

namespace atlaspl {

/// Number of workers to use for `requested` (0 = ATLASPL_WORKERS env var if
/// set, else hardware concurrency). Always >= 1.
int resolve_workers(int requested);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Calls must write
/// disjoint outputs. If any call throws, the exception from the lowest
/// failing index is rethrown after all workers stop.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

/// Fixed partition of [0, n) into chunks of `kReductionChunk` elements. The
/// partition does not depend on the worker count, so per-chunk partial sums
/// combined in chunk order give bit-identical reductions for any `workers`.
inline constexpr std::size_t kReductionChunk = 16384;

inline std::size_t chunk_count(std::size_t n) { return (n + kReductionChunk - 1) / kReductionChunk; }

void parallel_chunks(std::size_t n, int workers,
                     const std::function<void(std::size_t chunk, std::size_t begin, std::size_t end)>& fn);

}  // namespace atlaspl
