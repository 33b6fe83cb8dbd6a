// Copyright Contributors to the sprt project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

namespace sprt {

/// Global worker-thread count. 1 (the default) means fully serial execution.
void set_thread_count(int n);
int thread_count();

/// Run fn(begin, end) over [0, n) split into contiguous static chunks, one per
/// worker. Chunk boundaries depend only on n and the thread count, and every
/// reduction in the codebase combines per-chunk results in chunk order, so a
/// run is reproducible for a fixed --threads value.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace sprt
