// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic training data: parametric colored shapes inside the unit ball,
// isotropic teacher Gaussians on their surfaces, and multi-view RGB / alpha /
// depth renders of those teachers.

#pragma once

#include "atlasgs/atlas.hpp"
#include "atlasgs/camera.hpp"
#include "atlasgs/geometry.hpp"
#include "atlasgs/io.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace atlasgs {

enum class ShapeKind { sphere, box, torus, superquadric };

inline constexpr ShapeKind kAllShapeKinds[] = {ShapeKind::sphere, ShapeKind::box, ShapeKind::torus,
                                              ShapeKind::superquadric};

std::string to_string(ShapeKind kind);
/// Throws std::invalid_argument on unknown names.
ShapeKind parse_shape_kind(const std::string &name);
/// Class label: position in kAllShapeKinds.
int shape_label(ShapeKind kind);

/// Color varies along `axis` between two colors:
/// c(p) = a + (b - a) * (0.5 + 0.5 sin(frequency * axis.p + phase)).
struct ColorField {
    Vec3 color_a{0.8, 0.3, 0.2};
    Vec3 color_b{0.2, 0.4, 0.8};
    Vec3 axis{1.0, 0.0, 0.0};
    double frequency = 2.0;
    double phase = 0.0;

    Vec3 operator()(const Vec3 &p) const;
};

struct ShapeSpec {
    ShapeKind kind = ShapeKind::sphere;
    std::string id = "shape";
    double radius = 0.8;                   // sphere
    Vec3 half_extent{0.5, 0.4, 0.3};       // box, superquadric semi-axes
    double major_radius = 0.6;             // torus, around the z axis
    double minor_radius = 0.2;             // torus
    double exponent_ns = 1.0;              // superquadric north-south roundness
    double exponent_ew = 1.0;              // superquadric east-west roundness
    ColorField color;
    std::size_t surface_points = 2048;
    std::size_t teacher_gaussians = 4096;
    double teacher_opacity = 0.95;

    /// Throws std::invalid_argument for non-positive sizes or geometry that
    /// leaves the unit ball.
    void validate() const;
};

/// Randomized parameters for the index-th shape of a kind.
ShapeSpec random_shape_spec(ShapeKind kind, std::size_t index, Rng &rng);

struct ShapeSample {
    PointCloud cloud; // uniform surface samples with colors
    std::vector<Vec3> normals;
    std::vector<Gaussian3D> teacher;
};

ShapeSample make_shape(const ShapeSpec &spec, Rng &rng);

/// Implicit function of the shape surface (zero on the surface); used by tests.
double shape_implicit(const ShapeSpec &spec, const Vec3 &p);

struct RigOptions {
    int width = 64;
    int height = 64;
    double radius = 2.5;
    double ring_elevation_deg = 20.0;
    double high_elevation_deg = 60.0;
    std::size_t ring_views = 8;
    std::size_t high_views = 2;
    double near = 0.1;
    double far = 6.0;
};

/// Ring of cameras around the z axis plus elevated views, all aimed at the
/// origin with a field of view that contains the unit ball.
std::vector<Camera> default_camera_rig(const RigOptions &options = {});

inline const Rgb kDefaultBackground{1.0, 1.0, 1.0};

struct DatasetRecord {
    std::string id;
    ShapeKind kind = ShapeKind::sphere;
    int label = 0;
    std::uint64_t seed = 0;
    ShapeSpec spec;
    PointCloud points;
    std::vector<Camera> cameras;
    /// Leading cameras that form the training ring; the rest are held out.
    std::size_t ring_views = 0;
    std::vector<Image> rgb;   // 3 channels
    std::vector<Image> alpha; // 1 channel
    std::vector<Image> depth; // 1 channel, camera depth / far
};

/// Renders a teacher into per-camera images (unquantized).
void render_ground_truth(const std::vector<Gaussian3D> &teacher,
                         const std::vector<Camera> &cameras, const Rgb &background,
                         DatasetRecord &record);

struct DatagenOptions {
    std::vector<ShapeKind> kinds{ShapeKind::sphere};
    std::size_t shapes_per_kind = 1;
    std::uint64_t seed = 0;
    RigOptions rig;
    Rgb background = kDefaultBackground;
    std::size_t surface_points = 2048;
    std::size_t teacher_gaussians = 4096;
};

std::vector<DatasetRecord> generate_dataset(const DatagenOptions &options);

/// Layout per record: <root>/<id>/{points.ply, cameras.json, meta.json,
/// views/rgb_k.ppm, views/alpha_k.pgm, views/depth_k.pgm}.
void write_dataset(const std::vector<DatasetRecord> &records, const std::filesystem::path &root);
void write_record(const DatasetRecord &record, const std::filesystem::path &dir);
/// Records in lexicographic directory order. Throws DataError naming the
/// missing or corrupt file.
std::vector<DatasetRecord> read_dataset(const std::filesystem::path &root);
DatasetRecord read_record(const std::filesystem::path &dir);

} // namespace atlasgs
