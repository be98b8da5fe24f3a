#pragma once

#include <cstddef>
#include <functional>

namespace nodegam {

/// Number of worker threads used by parallel_for. 0 or 1 disables
/// parallelism. Set once at startup (from --threads / deterministic mode);
/// not synchronized against in-flight loops.
void set_num_threads(std::size_t n);
std::size_t num_threads();

/// Runs fn(begin, end, chunk_index) over fixed contiguous chunks of [0, n).
/// The partition depends only on n and the configured thread count, so a
/// fixed configuration always produces the same chunking (reductions done in
/// chunk order stay bit-reproducible). Exceptions from workers are rethrown.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

/// Number of chunks parallel_for will use for a loop of size n.
std::size_t parallel_chunks(std::size_t n);

}  // namespace nodegam
