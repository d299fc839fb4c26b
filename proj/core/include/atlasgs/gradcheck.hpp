// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "atlasgs/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace atlasgs {

struct GradCheckOptions {
    double eps = 1e-5;
    /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
    /// Negates the analytic gradient. Negative-control hook for the checker.
    bool inject_sign_error = false;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t worst_tensor = 0;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t coords_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences (f(t+eps) - f(t-eps)) / 2eps, coordinate by coordinate, and
/// returns the max of |a-n| / max(|a|, |n|, 1e-8). `params` must be leaves;
/// their values are perturbed in place and restored.
GradCheckResult check_gradient(const std::function<Tensor()> &f, std::vector<Tensor> params,
                               const GradCheckOptions &options = {});

} // namespace atlasgs
