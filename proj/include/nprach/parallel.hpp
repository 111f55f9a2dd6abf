#pragma once

#include <cstddef>
#include <functional>

namespace nprach {

/// Worker count from NPRACH_WORKERS, falling back to hardware concurrency.
int default_workers();

/// Runs body(i) for i in [0, n) on up to `workers` threads. Work is split
/// into contiguous chunks; callers write results by index so the outcome
/// does not depend on the thread count.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& body);

/// Keeps large freed blocks in the allocator instead of returning them to
/// the OS. Training allocates the same multi-megabyte tensors every step.
/// No-op outside glibc.
void retain_freed_memory();

}  // namespace nprach
