// Copyright (c) 2026 The MAGIC Authors
// SPDX-License-Identifier: Apache-2.0

#include "magic/parallel.hpp"

#include <omp.h>

#include <atomic>
#include <cstdlib>

namespace magic {

namespace {

int env_thread_cap() {
    const char* env = std::getenv("MAGIC_THREADS");
    if (env != nullptr) {
        int n = std::atoi(env);
        if (n >= 1) {
            return n;
        }
    }
    return omp_get_max_threads();
}

std::atomic<int> g_max_threads{0};

}  // namespace

int max_threads() {
    int n = g_max_threads.load(std::memory_order_relaxed);
    if (n == 0) {
        n = env_thread_cap();
        g_max_threads.store(n, std::memory_order_relaxed);
    }
    return n;
}

void set_max_threads(int n) {
    g_max_threads.store(n >= 1 ? n : 1, std::memory_order_relaxed);
}

}  // namespace magic
