// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// File formats: PLY point clouds and splats, binary PPM/PGM images. Every
// reader throws DataError with the offending path in the message.

#pragma once

#include "atlasgs/atlas.hpp"
#include "atlasgs/geometry.hpp"
#include "atlasgs/io_error.hpp"

#include <filesystem>
#include <vector>

namespace atlasgs {

enum class PlyFormat { ascii, binary };

/// Coordinates are stored as doubles (lossless); colors as uchar.
void write_point_ply(const std::filesystem::path &path, const PointCloud &cloud,
                     PlyFormat format = PlyFormat::binary);
/// Reads the vertex element of an ASCII or binary little-endian PLY. Colors
/// are picked up from red/green/blue (uchar scaled by 1/255, float as is).
PointCloud read_point_ply(const std::filesystem::path &path);

/// Splat PLY: float32 x, y, z, scale_0..2 (log), rot_0..3, opacity (logit),
/// red, green, blue.
void write_splat_ply(const std::filesystem::path &path, const std::vector<Gaussian3D> &gaussians);
std::vector<Gaussian3D> read_splat_ply(const std::filesystem::path &path);
/// Vertex count declared in a PLY header.
std::size_t ply_vertex_count(const std::filesystem::path &path);

struct Image {
    int width = 0;
    int height = 0;
    int channels = 0;         // 1 or 3
    std::vector<double> data; // row-major, values in [0,1]
};

/// 8-bit quantization used by the writers: round(clamp(v, 0, 1) * 255).
unsigned char quantize8(double v);

/// P6 (channels = 3) or P5 (channels = 1), maxval 255.
void write_pnm(const std::filesystem::path &path, const Image &image);
Image read_pnm(const std::filesystem::path &path);

} // namespace atlasgs
