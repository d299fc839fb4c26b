// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Software Gaussian splatting. Gaussians are projected with a first-order
// (EWA) approximation, globally depth sorted, and alpha-composited front to
// back per pixel:
//
//   a_i = min(0.99, o_i * exp(-0.5 d^T cov2d^-1 d)),  skipped if a_i < 1/255
//   C   = sum_i a_i T_i c_i + T_end * background,     T_i = prod_{j<i} (1 - a_j)
//
// Alpha and depth use the same weights (depth is the unnormalized
// alpha-weighted camera depth).

#pragma once

#include "atlasgs/atlas.hpp"
#include "atlasgs/camera.hpp"
#include "atlasgs/tensor.hpp"

#include <array>
#include <vector>

namespace atlasgs {

using Rgb = std::array<double, 3>;
using Mat3 = std::array<double, 9>; // row-major

inline constexpr double kCovarianceFloor = 0.3;
inline constexpr double kMaxSplatAlpha = 0.99;
inline constexpr double kMinSplatAlpha = 1.0 / 255.0;

/// Rotation matrix of a quaternion (w, x, y, z); renormalizes first.
/// Throws std::invalid_argument for the zero quaternion.
Mat3 quat_to_rotation(const std::array<double, 4> &q);

/// R diag(s)^2 R^T.
Mat3 covariance_3d(const Vec3 &scale, const std::array<double, 4> &q);

struct Projection {
    std::array<double, 2> mean2d{};
    std::array<double, 3> cov2d{}; // (xx, xy, yy), includes the 0.3 px floor
    double depth = 0.0;
    bool visible = false;
};

/// Projects a world-space Gaussian. Invisible when the camera depth is outside
/// (near, far) or the projected mean lies more than half the larger image
/// extent outside the image.
Projection project_gaussian(const Vec3 &mean, const Mat3 &cov3d, const Camera &camera);

struct RenderOutput {
    int width = 0;
    int height = 0;
    std::vector<double> rgb;   // H*W*3
    std::vector<double> alpha; // H*W
    std::vector<double> depth; // H*W
};

struct RasterSettings {
    int tile_size = 16;
};

struct RenderTensors {
    Tensor rgb;   // [H, W, 3]
    Tensor alpha; // [H, W]
    Tensor depth; // [H, W]
    RenderOutput to_output() const;
};

/// Tiled differentiable rasterizer. Gradients flow to all five Gaussian
/// tensors; depth order is treated as constant.
RenderTensors rasterize(const GaussianTensors &gaussians, const Camera &camera,
                        const Rgb &background, const RasterSettings &settings = {});

RenderOutput rasterize(const std::vector<Gaussian3D> &gaussians, const Camera &camera,
                       const Rgb &background, const RasterSettings &settings = {});

/// Per pixel over every visible Gaussian, no tiling or culling. Forward only.
RenderOutput rasterize_reference(const std::vector<Gaussian3D> &gaussians, const Camera &camera,
                                 const Rgb &background);

/// 10 log10(1 / mse) for values in [0, 1].
double psnr(const std::vector<double> &a, const std::vector<double> &b);

} // namespace atlasgs
