// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/camera.hpp"

#include "atlasgs/io_error.hpp"

#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

namespace atlasgs {

using json = nlohmann::json;

void Camera::validate() const {
    if (!(fx > 0.0) || !(fy > 0.0)) {
        throw std::invalid_argument("camera focal lengths must be positive");
    }
    if (!(near > 0.0) || !(near < far)) {
        throw std::invalid_argument("camera clip planes must satisfy 0 < near < far");
    }
    if (width <= 0 || height <= 0) {
        throw std::invalid_argument("camera image size must be positive");
    }
}

std::array<double, 3> Camera::to_camera(const std::array<double, 3> &p) const {
    const auto &m = world_to_camera;
    return {m[0] * p[0] + m[1] * p[1] + m[2] * p[2] + m[3],
            m[4] * p[0] + m[5] * p[1] + m[6] * p[2] + m[7],
            m[8] * p[0] + m[9] * p[1] + m[10] * p[2] + m[11]};
}

std::array<double, 3> Camera::position() const {
    // c = -R^T t
    const auto &m = world_to_camera;
    return {-(m[0] * m[3] + m[4] * m[7] + m[8] * m[11]),
            -(m[1] * m[3] + m[5] * m[7] + m[9] * m[11]),
            -(m[2] * m[3] + m[6] * m[7] + m[10] * m[11])};
}

namespace {

std::array<double, 3> normalized(std::array<double, 3> v) {
    const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (!(n > 0.0)) {
        throw std::invalid_argument("look_at: degenerate direction");
    }
    return {v[0] / n, v[1] / n, v[2] / n};
}

std::array<double, 3> cross(const std::array<double, 3> &a, const std::array<double, 3> &b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

} // namespace

Camera Camera::look_at(const std::array<double, 3> &eye, const std::array<double, 3> &target,
                       const std::array<double, 3> &up, double fx, double fy, int width,
                       int height, double near, double far) {
    const auto forward = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
    // y points down in image space, so the camera "down" axis is -up.
    const auto right = normalized(cross(forward, up));
    const auto down = cross(forward, right);
    Camera cam;
    cam.fx = fx;
    cam.fy = fy;
    cam.width = width;
    cam.height = height;
    cam.cx = 0.5 * (width - 1);
    cam.cy = 0.5 * (height - 1);
    cam.near = near;
    cam.far = far;
    const std::array<std::array<double, 3>, 3> rows = {right, down, forward};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
            cam.world_to_camera[r * 4 + c] = rows[r][c];
        }
        cam.world_to_camera[r * 4 + 3] =
            -(rows[r][0] * eye[0] + rows[r][1] * eye[1] + rows[r][2] * eye[2]);
    }
    return cam;
}

namespace {

json to_json_value(const Camera &c) {
    return json{{"fx", c.fx},
                {"fy", c.fy},
                {"cx", c.cx},
                {"cy", c.cy},
                {"width", c.width},
                {"height", c.height},
                {"world_to_camera", c.world_to_camera},
                {"near", c.near},
                {"far", c.far}};
}

Camera from_json_value(const json &j) {
    Camera c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto &m = j.at("world_to_camera");
    if (!m.is_array() || m.size() != 12) {
        throw std::invalid_argument("world_to_camera must hold 12 numbers");
    }
    for (std::size_t i = 0; i < 12; ++i) {
        c.world_to_camera[i] = m[i].get<double>();
    }
    c.near = j.at("near").get<double>();
    c.far = j.at("far").get<double>();
    c.validate();
    return c;
}

} // namespace

std::string camera_to_json(const Camera &camera) { return to_json_value(camera).dump(2); }

Camera camera_from_json(const std::string &text) { return from_json_value(json::parse(text)); }

std::vector<Camera> read_cameras(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) {
        throw DataError(path.string() + ": cannot open camera file");
    }
    try {
        const json j = json::parse(is);
        std::vector<Camera> out;
        if (j.is_array()) {
            for (const auto &e : j) {
                out.push_back(from_json_value(e));
            }
        } else {
            out.push_back(from_json_value(j));
        }
        return out;
    } catch (const std::exception &e) {
        throw DataError(path.string() + ": invalid camera file: " + e.what());
    }
}

void write_cameras(const std::filesystem::path &path, const std::vector<Camera> &cameras) {
    json arr = json::array();
    for (const auto &c : cameras) {
        arr.push_back(to_json_value(c));
    }
    std::ofstream os(path);
    if (!os) {
        throw DataError(path.string() + ": cannot open for writing");
    }
    os << arr.dump(2) << '\n';
}

} // namespace atlasgs
