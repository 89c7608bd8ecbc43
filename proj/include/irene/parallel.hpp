// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace irene {

/// Process-wide worker cap; 0 means hardware concurrency.
void set_thread_count(int n);
int thread_count();

/// Keeps large temporaries on the heap instead of fresh mmap pages; the
/// training loops allocate and free multi-megabyte tensors every step.
void retain_heap_memory();

/// Runs fn(chunk) for chunk in [0, n_chunks). Chunk c always goes to worker
/// c % workers, so per-worker reductions are reproducible for a fixed thread count.
/// `threads` <= 0 uses thread_count().
void parallel_for(std::size_t n_chunks, const std::function<void(std::size_t chunk, int worker)>& fn,
                  int threads = 0);

}  // namespace irene
