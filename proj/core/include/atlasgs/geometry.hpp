// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Point-set losses and sampling. Chamfer uses squared nearest-neighbor
// distances with mean reduction in both directions; EMD is the mean matched
// Euclidean distance of the optimal bijection.

#pragma once

#include "atlasgs/atlas.hpp"
#include "atlasgs/tensor.hpp"

#include <cstddef>
#include <vector>

namespace atlasgs {

struct PointCloud {
    std::vector<Vec3> points;
    std::vector<Vec3> colors; // empty or one per point

    std::size_t size() const { return points.size(); }
    bool has_colors() const { return !colors.empty(); }
};

/// Rows of an [N,3] tensor as points.
std::vector<Vec3> to_points(const Tensor &t);
/// [N,3] tensor of the given points (no gradient).
Tensor points_tensor(const std::vector<Vec3> &points);

double chamfer(const std::vector<Vec3> &p, const std::vector<Vec3> &q);
/// Differentiable in both [N,3] and [M,3] inputs. Nearest-neighbor ties
/// resolve to the lowest index.
Tensor chamfer(const Tensor &p, const Tensor &q);

/// Hungarian algorithm, O(n^3). Returns the mean matched distance; `match`
/// receives q-index per p-index when non-null.
double emd_exact(const std::vector<Vec3> &p, const std::vector<Vec3> &q,
                 std::vector<std::size_t> *match = nullptr);

struct AuctionOptions {
    /// Final bid increment relative to the largest pairwise distance.
    double relative_epsilon = 1e-7;
    /// Epsilon reduction factor between scaling phases.
    double scaling = 5.0;
};

/// Auction assignment with epsilon scaling; q-index per p-index.
std::vector<std::size_t> auction_assignment(const std::vector<Vec3> &p,
                                            const std::vector<Vec3> &q,
                                            const AuctionOptions &options = {});

double emd_approx(const std::vector<Vec3> &p, const std::vector<Vec3> &q,
                  const AuctionOptions &options = {});
/// Gradient flows through matched pair distances with the assignment held
/// constant.
Tensor emd_approx(const Tensor &p, const Tensor &q, const AuctionOptions &options = {});

/// Greedy max-min selection seeded at index 0. Throws when k exceeds the
/// point count.
std::vector<std::size_t> farthest_point_sampling(const std::vector<Vec3> &points, std::size_t k);

/// 0.5 * mean(exp(logvar) + mean^2 - 1 - logvar).
Tensor kl_diag_gaussian(const Tensor &mean, const Tensor &logvar);

} // namespace atlasgs
