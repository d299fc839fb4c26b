// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace atlasgs {

/// Pinhole camera. Pixel (x, y) has its center at image coordinates (x, y);
/// camera space is x right, y down, z forward.
struct Camera {
    double fx = 1.0;
    double fy = 1.0;
    double cx = 0.0;
    double cy = 0.0;
    int width = 1;
    int height = 1;
    /// Rigid world-to-camera transform as a row-major 3x4 matrix [R | t].
    std::array<double, 12> world_to_camera{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};
    double near = 0.01;
    double far = 100.0;

    /// Throws std::invalid_argument unless fx, fy > 0, 0 < near < far and the
    /// image is non-empty.
    void validate() const;

    std::array<double, 3> to_camera(const std::array<double, 3> &world) const;
    /// Camera center in world coordinates.
    std::array<double, 3> position() const;

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    static Camera look_at(const std::array<double, 3> &eye, const std::array<double, 3> &target,
                          const std::array<double, 3> &up, double fx, double fy, int width,
                          int height, double near, double far);
};

std::string camera_to_json(const Camera &camera);
Camera camera_from_json(const std::string &text);

/// A file holding either one camera object or an array of them.
std::vector<Camera> read_cameras(const std::filesystem::path &path);
void write_cameras(const std::filesystem::path &path, const std::vector<Camera> &cameras);

} // namespace atlasgs
