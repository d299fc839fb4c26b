// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Self-verification suite: finite-difference gradient checks, renderer oracle
// comparison, EMD fidelity and preconditioning identities.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace atlasgs {

struct CheckReport {
    std::string name;
    double max_error = 0.0;
    double threshold = 0.0;
    bool passed = false;
    std::size_t instances = 0;
    double seconds = 0.0;
};

struct CheckSuiteOptions {
    std::uint64_t seed = 0;
    std::size_t gradient_instances = 20;
    /// Coordinates probed per tensor per instance (0: all).
    std::size_t coords_per_tensor = 6;
    std::size_t render_scenes = 50;
    std::size_t emd_instances = 100;
    std::size_t brute_force_instances = 20;
    /// Negates analytic gradients; every gradient check should then fail.
    bool inject_sign_error = false;
};

inline constexpr double kGradientTolerance = 1e-4;
inline constexpr double kRasterGradientTolerance = 1e-3;
inline constexpr double kRenderOracleTolerance = 1e-5;
inline constexpr double kEmdRelativeTolerance = 0.05;
inline constexpr double kIdentityTolerance = 1e-12;

/// One report per differentiable operation family, evaluated in f64.
std::vector<CheckReport> gradient_checks(const CheckSuiteOptions &options);
/// Tiled rasterizer vs per-pixel reference, max abs difference per channel.
CheckReport renderer_oracle_check(const CheckSuiteOptions &options);
/// emd_approx vs Hungarian, max relative difference, sizes {8, 16, 32, 64}.
CheckReport emd_fidelity_check(const CheckSuiteOptions &options);
/// Hungarian vs permutation brute force on sizes <= 6.
CheckReport emd_bruteforce_check(const CheckSuiteOptions &options);
/// c_out^2 + c_skip^2 (s^2 + sd^2) = sd^2 and lambda c_out^2 = 1 on a log grid.
CheckReport precondition_check(const CheckSuiteOptions &options);

std::vector<CheckReport> run_check_suite(const CheckSuiteOptions &options);
std::string reports_to_json(const std::vector<CheckReport> &reports);

} // namespace atlasgs
