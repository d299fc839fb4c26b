// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace atlasgs {

/// Worker count used by parallel_for (>= 1). Defaults to 1.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs body(worker, begin, end) over contiguous chunks of [0, n). Chunk
/// boundaries depend only on n and the thread count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t worker, std::size_t begin, std::size_t end)> &body);

} // namespace atlasgs
