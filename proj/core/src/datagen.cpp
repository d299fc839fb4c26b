// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/datagen.hpp"

#include "atlasgs/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>
#include <stdexcept>

namespace atlasgs {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

double norm(const Vec3 &v) { return std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]); }

Vec3 normalized(const Vec3 &v) {
    const double n = norm(v);
    return {v[0] / n, v[1] / n, v[2] / n};
}

Vec3 random_direction(Rng &rng) {
    while (true) {
        const Vec3 d{rng.normal(), rng.normal(), rng.normal()};
        const double n = norm(d);
        if (n > 1e-12) {
            return {d[0] / n, d[1] / n, d[2] / n};
        }
    }
}

double superquadric_f(const ShapeSpec &s, const Vec3 &p) {
    const double e1 = s.exponent_ns, e2 = s.exponent_ew;
    const double x = std::abs(p[0] / s.half_extent[0]);
    const double y = std::abs(p[1] / s.half_extent[1]);
    const double z = std::abs(p[2] / s.half_extent[2]);
    return std::pow(std::pow(x, 2.0 / e2) + std::pow(y, 2.0 / e2), e2 / e1) + std::pow(z, 2.0 / e1);
}

Vec3 superquadric_normal(const ShapeSpec &s, const Vec3 &p) {
    // Gradient of the inside-outside function.
    const double e1 = s.exponent_ns, e2 = s.exponent_ew;
    const Vec3 &a = s.half_extent;
    const double x = p[0] / a[0], y = p[1] / a[1], z = p[2] / a[2];
    const double ax = std::abs(x), ay = std::abs(y), az = std::abs(z);
    const double g = std::pow(ax, 2.0 / e2) + std::pow(ay, 2.0 / e2);
    const double outer = g > 0.0 ? (2.0 / e1) * std::pow(g, e2 / e1 - 1.0) : 0.0;
    auto dpow = [](double t, double e) { return t > 0.0 ? std::pow(t, 2.0 / e - 1.0) : 0.0; };
    const Vec3 n{outer * dpow(ax, e2) * std::copysign(1.0, x) / a[0],
                 outer * dpow(ay, e2) * std::copysign(1.0, y) / a[1],
                 (2.0 / e1) * dpow(az, e1) * std::copysign(1.0, z) / a[2]};
    const double len = norm(n);
    return len > 0.0 ? Vec3{n[0] / len, n[1] / len, n[2] / len} : normalized(p);
}

struct SurfacePoint {
    Vec3 p;
    Vec3 n;
};

SurfacePoint sample_sphere(const ShapeSpec &s, Rng &rng) {
    const Vec3 d = random_direction(rng);
    return {{s.radius * d[0], s.radius * d[1], s.radius * d[2]}, d};
}

SurfacePoint sample_box(const ShapeSpec &s, Rng &rng) {
    const Vec3 &h = s.half_extent;
    const double areas[3] = {h[1] * h[2], h[0] * h[2], h[0] * h[1]}; // faces normal to x, y, z
    const double total = areas[0] + areas[1] + areas[2];
    double t = rng.uniform() * total;
    int axis = 0;
    while (axis < 2 && t >= areas[axis]) {
        t -= areas[axis];
        ++axis;
    }
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    SurfacePoint sp{};
    for (int c = 0; c < 3; ++c) {
        sp.p[c] = c == axis ? sign * h[c] : rng.uniform(-h[c], h[c]);
        sp.n[c] = c == axis ? sign : 0.0;
    }
    return sp;
}

SurfacePoint sample_torus(const ShapeSpec &s, Rng &rng) {
    const double R = s.major_radius, r = s.minor_radius;
    while (true) {
        const double u = rng.uniform(0.0, 2.0 * kPi);
        const double v = rng.uniform(0.0, 2.0 * kPi);
        // Area element is proportional to R + r cos v.
        if (rng.uniform() * (R + r) > R + r * std::cos(v)) {
            continue;
        }
        const double ring = R + r * std::cos(v);
        const Vec3 p{ring * std::cos(u), ring * std::sin(u), r * std::sin(v)};
        const Vec3 n{std::cos(v) * std::cos(u), std::cos(v) * std::sin(u), std::sin(v)};
        return {p, n};
    }
}

// Ray-cast from the center, then importance-resample by the area element
// r^2 / |n . d| of a direction-uniform sample.
std::vector<SurfacePoint> sample_superquadric(const ShapeSpec &s, std::size_t count, Rng &rng) {
    const std::size_t pool = count * 8;
    std::vector<SurfacePoint> cand(pool);
    std::vector<double> cdf(pool);
    double acc = 0.0;
    for (std::size_t i = 0; i < pool; ++i) {
        const Vec3 d = random_direction(rng);
        const double r = std::pow(superquadric_f(s, d), -s.exponent_ns / 2.0);
        cand[i].p = {r * d[0], r * d[1], r * d[2]};
        cand[i].n = superquadric_normal(s, cand[i].p);
        const double cosang = std::abs(cand[i].n[0] * d[0] + cand[i].n[1] * d[1] + cand[i].n[2] * d[2]);
        acc += r * r / std::max(cosang, 1e-3);
        cdf[i] = acc;
    }
    std::vector<SurfacePoint> out(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double t = rng.uniform() * acc;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), t);
        out[i] = cand[std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), pool - 1)];
    }
    return out;
}

std::vector<SurfacePoint> sample_surface(const ShapeSpec &s, std::size_t count, Rng &rng) {
    if (s.kind == ShapeKind::superquadric) {
        return sample_superquadric(s, count, rng);
    }
    std::vector<SurfacePoint> out(count);
    for (auto &sp : out) {
        switch (s.kind) {
        case ShapeKind::sphere: sp = sample_sphere(s, rng); break;
        case ShapeKind::box: sp = sample_box(s, rng); break;
        case ShapeKind::torus: sp = sample_torus(s, rng); break;
        case ShapeKind::superquadric: break;
        }
    }
    return out;
}

// Mean distance to the three nearest other samples.
std::vector<double> local_spacing(const std::vector<SurfacePoint> &pts) {
    const std::size_t n = pts.size();
    std::vector<double> out(n, 0.0);
    parallel_for(n, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double best[3] = {std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::infinity(),
                              std::numeric_limits<double>::infinity()};
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double dx = pts[i].p[0] - pts[j].p[0];
                const double dy = pts[i].p[1] - pts[j].p[1];
                const double dz = pts[i].p[2] - pts[j].p[2];
                double d = dx * dx + dy * dy + dz * dz;
                for (double &b : best) {
                    if (d < b) std::swap(d, b);
                }
            }
            double s = 0.0;
            int k = 0;
            for (double b : best) {
                if (std::isfinite(b)) {
                    s += std::sqrt(b);
                    ++k;
                }
            }
            out[i] = k > 0 ? s / k : 0.05;
        }
    });
    return out;
}

double max_extent_norm(const ShapeSpec &s) {
    switch (s.kind) {
    case ShapeKind::sphere: return s.radius;
    case ShapeKind::box:
    case ShapeKind::superquadric: return norm(s.half_extent);
    case ShapeKind::torus: return std::max(s.major_radius + s.minor_radius, s.minor_radius);
    }
    return 0.0;
}

Vec3 random_color(Rng &rng) { return {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)}; }

json spec_to_json(const ShapeSpec &s) {
    return json{{"kind", to_string(s.kind)},
                {"radius", s.radius},
                {"half_extent", s.half_extent},
                {"major_radius", s.major_radius},
                {"minor_radius", s.minor_radius},
                {"exponent_ns", s.exponent_ns},
                {"exponent_ew", s.exponent_ew},
                {"color_a", s.color.color_a},
                {"color_b", s.color.color_b},
                {"color_axis", s.color.axis},
                {"color_frequency", s.color.frequency},
                {"color_phase", s.color.phase},
                {"surface_points", s.surface_points},
                {"teacher_gaussians", s.teacher_gaussians},
                {"teacher_opacity", s.teacher_opacity}};
}

ShapeSpec spec_from_json(const json &j) {
    ShapeSpec s;
    s.kind = parse_shape_kind(j.at("kind").get<std::string>());
    s.radius = j.at("radius").get<double>();
    s.half_extent = j.at("half_extent").get<Vec3>();
    s.major_radius = j.at("major_radius").get<double>();
    s.minor_radius = j.at("minor_radius").get<double>();
    s.exponent_ns = j.at("exponent_ns").get<double>();
    s.exponent_ew = j.at("exponent_ew").get<double>();
    s.color.color_a = j.at("color_a").get<Vec3>();
    s.color.color_b = j.at("color_b").get<Vec3>();
    s.color.axis = j.at("color_axis").get<Vec3>();
    s.color.frequency = j.at("color_frequency").get<double>();
    s.color.phase = j.at("color_phase").get<double>();
    s.surface_points = j.at("surface_points").get<std::size_t>();
    s.teacher_gaussians = j.at("teacher_gaussians").get<std::size_t>();
    s.teacher_opacity = j.at("teacher_opacity").get<double>();
    return s;
}

} // namespace

std::string to_string(ShapeKind kind) {
    switch (kind) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::box: return "box";
    case ShapeKind::torus: return "torus";
    case ShapeKind::superquadric: return "superquadric";
    }
    return "unknown";
}

ShapeKind parse_shape_kind(const std::string &name) {
    for (ShapeKind k : kAllShapeKinds) {
        if (to_string(k) == name) return k;
    }
    throw std::invalid_argument("unknown shape kind '" + name +
                                "' (expected sphere, box, torus or superquadric)");
}

int shape_label(ShapeKind kind) {
    for (int i = 0; i < 4; ++i) {
        if (kAllShapeKinds[i] == kind) return i;
    }
    return -1;
}

Vec3 ColorField::operator()(const Vec3 &p) const {
    const double t =
        0.5 + 0.5 * std::sin(frequency * (axis[0] * p[0] + axis[1] * p[1] + axis[2] * p[2]) + phase);
    Vec3 c;
    for (int i = 0; i < 3; ++i) {
        c[i] = std::clamp(color_a[i] + (color_b[i] - color_a[i]) * t, 0.0, 1.0);
    }
    return c;
}

void ShapeSpec::validate() const {
    auto positive = [](double v) { return v > 0.0 && std::isfinite(v); };
    bool ok = true;
    switch (kind) {
    case ShapeKind::sphere: ok = positive(radius); break;
    case ShapeKind::box:
        ok = positive(half_extent[0]) && positive(half_extent[1]) && positive(half_extent[2]);
        break;
    case ShapeKind::torus:
        ok = positive(major_radius) && positive(minor_radius) && minor_radius < major_radius;
        break;
    case ShapeKind::superquadric:
        ok = positive(half_extent[0]) && positive(half_extent[1]) && positive(half_extent[2]) &&
             exponent_ns >= 0.1 && exponent_ns <= 2.0 && exponent_ew >= 0.1 && exponent_ew <= 2.0;
        break;
    }
    if (!ok) {
        throw std::invalid_argument("shape '" + id + "': invalid " + to_string(kind) + " parameters");
    }
    if (max_extent_norm(*this) > 1.0 + 1e-12) {
        throw std::invalid_argument("shape '" + id + "': geometry leaves the unit ball");
    }
    if (surface_points == 0 || teacher_gaussians == 0) {
        throw std::invalid_argument("shape '" + id + "': sample counts must be positive");
    }
    if (!(teacher_opacity > 0.0 && teacher_opacity <= 1.0)) {
        throw std::invalid_argument("shape '" + id + "': teacher opacity must be in (0, 1]");
    }
}

ShapeSpec random_shape_spec(ShapeKind kind, std::size_t index, Rng &rng) {
    ShapeSpec s;
    s.kind = kind;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu", to_string(kind).c_str(), index);
    s.id = buf;
    switch (kind) {
    case ShapeKind::sphere: s.radius = rng.uniform(0.6, 0.9); break;
    case ShapeKind::box:
        s.half_extent = {rng.uniform(0.3, 0.55), rng.uniform(0.3, 0.55), rng.uniform(0.3, 0.55)};
        break;
    case ShapeKind::torus:
        s.major_radius = rng.uniform(0.5, 0.65);
        s.minor_radius = rng.uniform(0.15, 0.25);
        break;
    case ShapeKind::superquadric:
        s.half_extent = {rng.uniform(0.35, 0.55), rng.uniform(0.35, 0.55), rng.uniform(0.35, 0.55)};
        s.exponent_ns = rng.uniform(0.4, 1.6);
        s.exponent_ew = rng.uniform(0.4, 1.6);
        break;
    }
    s.color.color_a = random_color(rng);
    s.color.color_b = random_color(rng);
    s.color.axis = random_direction(rng);
    s.color.frequency = rng.uniform(1.5, 3.0);
    s.color.phase = rng.uniform(0.0, 2.0 * kPi);
    return s;
}

double shape_implicit(const ShapeSpec &s, const Vec3 &p) {
    switch (s.kind) {
    case ShapeKind::sphere: return norm(p) - s.radius;
    case ShapeKind::box: {
        double m = -std::numeric_limits<double>::infinity();
        for (int c = 0; c < 3; ++c) m = std::max(m, std::abs(p[c]) - s.half_extent[c]);
        return m;
    }
    case ShapeKind::torus: {
        const double q = std::sqrt(p[0] * p[0] + p[1] * p[1]) - s.major_radius;
        return q * q + p[2] * p[2] - s.minor_radius * s.minor_radius;
    }
    case ShapeKind::superquadric: return superquadric_f(s, p) - 1.0;
    }
    return 0.0;
}

ShapeSample make_shape(const ShapeSpec &spec, Rng &rng) {
    spec.validate();
    ShapeSample out;
    const auto surf = sample_surface(spec, spec.surface_points, rng);
    out.cloud.points.reserve(surf.size());
    out.cloud.colors.reserve(surf.size());
    out.normals.reserve(surf.size());
    for (const auto &sp : surf) {
        out.cloud.points.push_back(sp.p);
        out.cloud.colors.push_back(spec.color(sp.p));
        out.normals.push_back(sp.n);
    }
    const auto teach = sample_surface(spec, spec.teacher_gaussians, rng);
    const auto spacing = local_spacing(teach);
    out.teacher.resize(teach.size());
    for (std::size_t i = 0; i < teach.size(); ++i) {
        auto &g = out.teacher[i];
        g.mean = teach[i].p;
        g.scale = {spacing[i], spacing[i], spacing[i]};
        g.rotation = {1.0, 0.0, 0.0, 0.0};
        g.opacity = spec.teacher_opacity;
        g.color = spec.color(teach[i].p);
    }
    return out;
}

std::vector<Camera> default_camera_rig(const RigOptions &o) {
    if (o.radius <= 1.0) {
        throw std::invalid_argument("camera rig radius must exceed the unit ball");
    }
    // Focal length that fits the unit ball (half-angle asin(1/radius)).
    const double half = std::asin(1.0 / o.radius);
    const double fx = (0.5 * std::min(o.width, o.height) - 1.0) / std::tan(half);
    std::vector<Camera> cams;
    auto add = [&](double azimuth, double elevation) {
        const double ce = std::cos(elevation);
        const Vec3 eye{o.radius * ce * std::cos(azimuth), o.radius * ce * std::sin(azimuth),
                       o.radius * std::sin(elevation)};
        cams.push_back(Camera::look_at(eye, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, fx, fx, o.width,
                                       o.height, o.near, o.far));
    };
    for (std::size_t k = 0; k < o.ring_views; ++k) {
        add(2.0 * kPi * static_cast<double>(k) / static_cast<double>(o.ring_views),
            o.ring_elevation_deg * kPi / 180.0);
    }
    for (std::size_t k = 0; k < o.high_views; ++k) {
        add(kPi / 4.0 + 2.0 * kPi * static_cast<double>(k) / static_cast<double>(o.high_views),
            o.high_elevation_deg * kPi / 180.0);
    }
    return cams;
}

void render_ground_truth(const std::vector<Gaussian3D> &teacher, const std::vector<Camera> &cameras,
                         const Rgb &background, DatasetRecord &record) {
    record.cameras = cameras;
    record.rgb.clear();
    record.alpha.clear();
    record.depth.clear();
    for (const auto &cam : cameras) {
        const RenderOutput r = rasterize(teacher, cam, background);
        Image rgb{cam.width, cam.height, 3, r.rgb};
        Image alpha{cam.width, cam.height, 1, r.alpha};
        Image depth{cam.width, cam.height, 1, r.depth};
        for (double &d : depth.data) d /= cam.far;
        record.rgb.push_back(std::move(rgb));
        record.alpha.push_back(std::move(alpha));
        record.depth.push_back(std::move(depth));
    }
}

std::vector<DatasetRecord> generate_dataset(const DatagenOptions &options) {
    if (options.kinds.empty() || options.shapes_per_kind == 0) {
        throw std::invalid_argument("generate_dataset: need at least one kind and one shape");
    }
    const auto cams = default_camera_rig(options.rig);
    const std::size_t total = options.kinds.size() * options.shapes_per_kind;
    std::vector<DatasetRecord> records(total);
    for (std::size_t i = 0; i < total; ++i) {
        const ShapeKind kind = options.kinds[i / options.shapes_per_kind];
        const std::size_t index = i % options.shapes_per_kind;
        const std::uint64_t seed = Rng::derive(options.seed, {static_cast<std::uint64_t>(shape_label(kind)), index});
        Rng rng(seed);
        ShapeSpec spec = random_shape_spec(kind, index, rng);
        spec.surface_points = options.surface_points;
        spec.teacher_gaussians = options.teacher_gaussians;
        const ShapeSample sample = make_shape(spec, rng);
        auto &rec = records[i];
        rec.id = spec.id;
        rec.kind = kind;
        rec.label = shape_label(kind);
        rec.seed = seed;
        rec.spec = spec;
        rec.ring_views = options.rig.ring_views;
        rec.points = sample.cloud;
        render_ground_truth(sample.teacher, cams, options.background, rec);
    }
    return records;
}

void write_record(const DatasetRecord &rec, const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir / "views", ec);
    if (ec) {
        throw DataError(dir.string() + ": cannot create directory: " + ec.message());
    }
    write_point_ply(dir / "points.ply", rec.points, PlyFormat::binary);
    write_cameras(dir / "cameras.json", rec.cameras);
    for (std::size_t k = 0; k < rec.cameras.size(); ++k) {
        const std::string s = std::to_string(k);
        write_pnm(dir / "views" / ("rgb_" + s + ".ppm"), rec.rgb[k]);
        write_pnm(dir / "views" / ("alpha_" + s + ".pgm"), rec.alpha[k]);
        write_pnm(dir / "views" / ("depth_" + s + ".pgm"), rec.depth[k]);
    }
    json meta{{"format_version", 1},
              {"id", rec.id},
              {"kind", to_string(rec.kind)},
              {"label", rec.label},
              {"seed", rec.seed},
              {"views", rec.cameras.size()},
              {"ring_views", rec.ring_views},
              {"points", rec.points.size()},
              {"depth_encoding", "camera_depth_over_far"},
              {"spec", spec_to_json(rec.spec)}};
    std::ofstream os(dir / "meta.json");
    if (!os) {
        throw DataError((dir / "meta.json").string() + ": cannot open for writing");
    }
    os << meta.dump(2) << '\n';
}

void write_dataset(const std::vector<DatasetRecord> &records, const fs::path &root) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec || !fs::is_directory(root)) {
        throw DataError(root.string() + ": cannot create output directory");
    }
    for (const auto &rec : records) {
        write_record(rec, root / rec.id);
    }
}

DatasetRecord read_record(const fs::path &dir) {
    DatasetRecord rec;
    const fs::path meta_path = dir / "meta.json";
    std::ifstream is(meta_path);
    if (!is) {
        throw DataError(meta_path.string() + ": missing");
    }
    std::size_t views = 0;
    try {
        const json meta = json::parse(is);
        rec.id = meta.at("id").get<std::string>();
        rec.kind = parse_shape_kind(meta.at("kind").get<std::string>());
        rec.label = meta.at("label").get<int>();
        rec.seed = meta.at("seed").get<std::uint64_t>();
        views = meta.at("views").get<std::size_t>();
        rec.ring_views = meta.at("ring_views").get<std::size_t>();
        rec.spec = spec_from_json(meta.at("spec"));
        rec.spec.id = rec.id;
    } catch (const std::exception &e) {
        throw DataError(meta_path.string() + ": invalid metadata: " + e.what());
    }
    const fs::path cam_path = dir / "cameras.json";
    if (!fs::exists(cam_path)) {
        throw DataError(cam_path.string() + ": missing");
    }
    rec.cameras = read_cameras(cam_path);
    if (rec.cameras.size() != views) {
        throw DataError(cam_path.string() + ": camera count differs from meta.json view count");
    }
    const fs::path ply_path = dir / "points.ply";
    if (!fs::exists(ply_path)) {
        throw DataError(ply_path.string() + ": missing");
    }
    rec.points = read_point_ply(ply_path);
    if (rec.points.size() == 0) {
        throw DataError(ply_path.string() + ": empty point cloud");
    }
    for (std::size_t k = 0; k < views; ++k) {
        const std::string s = std::to_string(k);
        const auto &cam = rec.cameras[k];
        auto load = [&](const std::string &name, int channels) {
            const fs::path p = dir / "views" / name;
            Image img = read_pnm(p);
            if (img.width != cam.width || img.height != cam.height || img.channels != channels) {
                throw DataError(p.string() + ": image size or channel count disagrees with camera");
            }
            return img;
        };
        rec.rgb.push_back(load("rgb_" + s + ".ppm", 3));
        rec.alpha.push_back(load("alpha_" + s + ".pgm", 1));
        rec.depth.push_back(load("depth_" + s + ".pgm", 1));
    }
    return rec;
}

std::vector<DatasetRecord> read_dataset(const fs::path &root) {
    if (!fs::is_directory(root)) {
        throw DataError(root.string() + ": dataset directory not found");
    }
    std::vector<fs::path> dirs;
    for (const auto &e : fs::directory_iterator(root)) {
        if (e.is_directory()) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    std::vector<DatasetRecord> out;
    for (const auto &d : dirs) {
        out.push_back(read_record(d));
    }
    if (out.empty()) {
        throw DataError(root.string() + ": dataset contains no shapes");
    }
    return out;
}

} // namespace atlasgs
