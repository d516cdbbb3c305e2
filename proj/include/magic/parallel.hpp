// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace magic {

// Elements per reduction chunk. Reductions sum each chunk serially in double
// and combine the chunk partials in chunk order, so results do not depend on
// the number of worker threads.
inline constexpr int64_t kReductionChunk = 4096;

// Loops smaller than this run serially; the OpenMP fork is not worth it.
inline constexpr int64_t kParallelGrain = 16384;

// Worker cap. Initialized once from MAGIC_THREADS (default: hardware count).
int max_threads();
void set_max_threads(int n);

}  // namespace magic
