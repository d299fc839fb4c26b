// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

namespace atlasgs {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little, "little-endian host required");

namespace {

std::ofstream open_out(const fs::path &path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) {
        throw DataError(path.string() + ": cannot open for writing");
    }
    return os;
}

std::ifstream open_in(const fs::path &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) {
        throw DataError(path.string() + ": cannot open");
    }
    return is;
}

template <typename T>
void put(std::ostream &os, T v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

std::size_t type_size(PlyType t) {
    switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
    }
    return 0;
}

bool parse_type(const std::string &s, PlyType &t) {
    static const std::pair<const char *, PlyType> table[] = {
        {"char", PlyType::i8},    {"int8", PlyType::i8},     {"uchar", PlyType::u8},
        {"uint8", PlyType::u8},   {"short", PlyType::i16},   {"int16", PlyType::i16},
        {"ushort", PlyType::u16}, {"uint16", PlyType::u16},  {"int", PlyType::i32},
        {"int32", PlyType::i32},  {"uint", PlyType::u32},    {"uint32", PlyType::u32},
        {"float", PlyType::f32},  {"float32", PlyType::f32}, {"double", PlyType::f64},
        {"float64", PlyType::f64}};
    for (const auto &[name, type] : table) {
        if (s == name) {
            t = type;
            return true;
        }
    }
    return false;
}

double decode_binary(const char *p, PlyType t) {
    switch (t) {
    case PlyType::i8: { std::int8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::u8: { std::uint8_t v; std::memcpy(&v, p, 1); return v; }
    case PlyType::i16: { std::int16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::u16: { std::uint16_t v; std::memcpy(&v, p, 2); return v; }
    case PlyType::i32: { std::int32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::u32: { std::uint32_t v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f32: { float v; std::memcpy(&v, p, 4); return v; }
    case PlyType::f64: { double v; std::memcpy(&v, p, 8); return v; }
    }
    return 0.0;
}

struct PlyProperty {
    std::string name;
    PlyType type = PlyType::f32;
};

struct PlyHeader {
    bool binary = false;
    std::size_t vertices = 0;
    std::vector<PlyProperty> props;
};

PlyHeader read_header(std::istream &is, const fs::path &path) {
    std::string line;
    if (!std::getline(is, line) || line.substr(0, 3) != "ply") {
        throw DataError(path.string() + ": not a PLY file");
    }
    PlyHeader h;
    bool in_vertex = false;
    bool seen_vertex = false;
    bool seen_format = false;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "end_header") {
            if (!seen_format || !seen_vertex) {
                throw DataError(path.string() + ": PLY header lacks format or vertex element");
            }
            return h;
        }
        if (key == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt == "ascii") {
                h.binary = false;
            } else if (fmt == "binary_little_endian") {
                h.binary = true;
            } else {
                throw DataError(path.string() + ": unsupported PLY format '" + fmt + "'");
            }
            seen_format = true;
        } else if (key == "element") {
            std::string name;
            std::size_t count = 0;
            ls >> name >> count;
            if (seen_vertex && !in_vertex) {
                continue;
            }
            in_vertex = name == "vertex";
            if (in_vertex) {
                h.vertices = count;
                seen_vertex = true;
            } else if (!seen_vertex && count > 0) {
                throw DataError(path.string() + ": PLY elements before 'vertex' are unsupported");
            }
        } else if (key == "property" && in_vertex) {
            std::string type, name;
            ls >> type;
            if (type == "list") {
                throw DataError(path.string() + ": list properties on vertices are unsupported");
            }
            ls >> name;
            PlyProperty p;
            p.name = name;
            if (!parse_type(type, p.type)) {
                throw DataError(path.string() + ": unknown PLY type '" + type + "'");
            }
            h.props.push_back(p);
        }
    }
    throw DataError(path.string() + ": truncated PLY header");
}

// Vertex rows as doubles in property order.
std::vector<double> read_vertices(std::istream &is, const PlyHeader &h, const fs::path &path) {
    const std::size_t np = h.props.size();
    std::vector<double> out(h.vertices * np);
    if (h.binary) {
        std::size_t stride = 0;
        for (const auto &p : h.props) stride += type_size(p.type);
        std::vector<char> buf(stride * h.vertices);
        is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
        if (static_cast<std::size_t>(is.gcount()) != buf.size()) {
            throw DataError(path.string() + ": truncated PLY vertex data");
        }
        for (std::size_t v = 0; v < h.vertices; ++v) {
            const char *row = buf.data() + v * stride;
            for (std::size_t k = 0; k < np; ++k) {
                out[v * np + k] = decode_binary(row, h.props[k].type);
                row += type_size(h.props[k].type);
            }
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (!(is >> out[i])) {
                throw DataError(path.string() + ": truncated or malformed ASCII PLY data");
            }
        }
    }
    for (double v : out) {
        if (!std::isfinite(v)) {
            throw DataError(path.string() + ": non-finite PLY value");
        }
    }
    return out;
}

int find_prop(const PlyHeader &h, const char *name) {
    for (std::size_t i = 0; i < h.props.size(); ++i) {
        if (h.props[i].name == name) return static_cast<int>(i);
    }
    return -1;
}

int require_prop(const PlyHeader &h, const char *name, const fs::path &path) {
    const int i = find_prop(h, name);
    if (i < 0) {
        throw DataError(path.string() + ": PLY lacks vertex property '" + name + "'");
    }
    return i;
}

double logit(double p) {
    const double c = std::clamp(p, 1e-7, 1.0 - 1e-7);
    return std::log(c / (1.0 - c));
}

} // namespace

void write_point_ply(const fs::path &path, const PointCloud &cloud, PlyFormat format) {
    if (cloud.has_colors() && cloud.colors.size() != cloud.points.size()) {
        throw std::invalid_argument("write_point_ply: color count differs from point count");
    }
    auto os = open_out(path);
    const bool binary = format == PlyFormat::binary;
    os << "ply\nformat " << (binary ? "binary_little_endian" : "ascii") << " 1.0\n"
       << "element vertex " << cloud.size() << "\n"
       << "property double x\nproperty double y\nproperty double z\n";
    if (cloud.has_colors()) {
        os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
    }
    os << "end_header\n";
    for (std::size_t i = 0; i < cloud.size(); ++i) {
        const auto &p = cloud.points[i];
        if (binary) {
            put(os, p[0]);
            put(os, p[1]);
            put(os, p[2]);
            if (cloud.has_colors()) {
                for (int c = 0; c < 3; ++c) put(os, quantize8(cloud.colors[i][c]));
            }
        } else {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g", p[0], p[1], p[2]);
            os << buf;
            if (cloud.has_colors()) {
                for (int c = 0; c < 3; ++c) os << ' ' << static_cast<int>(quantize8(cloud.colors[i][c]));
            }
            os << '\n';
        }
    }
    if (!os) {
        throw DataError(path.string() + ": write failed");
    }
}

PointCloud read_point_ply(const fs::path &path) {
    auto is = open_in(path);
    const PlyHeader h = read_header(is, path);
    const auto data = read_vertices(is, h, path);
    const int ix = require_prop(h, "x", path);
    const int iy = require_prop(h, "y", path);
    const int iz = require_prop(h, "z", path);
    const int ir = find_prop(h, "red");
    const int ig = find_prop(h, "green");
    const int ib = find_prop(h, "blue");
    const bool colors = ir >= 0 && ig >= 0 && ib >= 0;
    const std::size_t np = h.props.size();
    PointCloud cloud;
    cloud.points.resize(h.vertices);
    if (colors) cloud.colors.resize(h.vertices);
    for (std::size_t v = 0; v < h.vertices; ++v) {
        const double *row = data.data() + v * np;
        cloud.points[v] = {row[ix], row[iy], row[iz]};
        if (colors) {
            const int idx[3] = {ir, ig, ib};
            for (int c = 0; c < 3; ++c) {
                const PlyType t = h.props[static_cast<std::size_t>(idx[c])].type;
                const double raw = row[idx[c]];
                cloud.colors[v][c] = (t == PlyType::f32 || t == PlyType::f64) ? raw : raw / 255.0;
            }
        }
    }
    return cloud;
}

void write_splat_ply(const fs::path &path, const std::vector<Gaussian3D> &gaussians) {
    auto os = open_out(path);
    os << "ply\nformat binary_little_endian 1.0\n"
       << "element vertex " << gaussians.size() << "\n";
    for (const char *name : {"x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
                             "rot_2", "rot_3", "opacity", "red", "green", "blue"}) {
        os << "property float " << name << "\n";
    }
    os << "end_header\n";
    for (const auto &g : gaussians) {
        for (double v : g.mean) put(os, static_cast<float>(v));
        for (double v : g.scale) put(os, static_cast<float>(std::log(v)));
        for (double v : g.rotation) put(os, static_cast<float>(v));
        put(os, static_cast<float>(logit(g.opacity)));
        for (double v : g.color) put(os, static_cast<float>(v));
    }
    if (!os) {
        throw DataError(path.string() + ": write failed");
    }
}

std::vector<Gaussian3D> read_splat_ply(const fs::path &path) {
    auto is = open_in(path);
    const PlyHeader h = read_header(is, path);
    const auto data = read_vertices(is, h, path);
    const char *names[14] = {"x",     "y",     "z",     "scale_0", "scale_1", "scale_2", "rot_0",
                             "rot_1", "rot_2", "rot_3", "opacity", "red",     "green",   "blue"};
    int idx[14];
    for (int k = 0; k < 14; ++k) idx[k] = require_prop(h, names[k], path);
    const std::size_t np = h.props.size();
    std::vector<Gaussian3D> out(h.vertices);
    for (std::size_t v = 0; v < h.vertices; ++v) {
        const double *row = data.data() + v * np;
        auto &g = out[v];
        for (int c = 0; c < 3; ++c) {
            g.mean[c] = row[idx[c]];
            g.scale[c] = std::exp(row[idx[3 + c]]);
            g.color[c] = row[idx[11 + c]];
        }
        for (int c = 0; c < 4; ++c) g.rotation[c] = row[idx[6 + c]];
        g.opacity = 1.0 / (1.0 + std::exp(-row[idx[10]]));
    }
    return out;
}

std::size_t ply_vertex_count(const fs::path &path) {
    auto is = open_in(path);
    return read_header(is, path).vertices;
}

unsigned char quantize8(double v) {
    return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

void write_pnm(const fs::path &path, const Image &image) {
    if (image.channels != 1 && image.channels != 3) {
        throw std::invalid_argument("write_pnm: channels must be 1 or 3");
    }
    const std::size_t n = static_cast<std::size_t>(image.width) * image.height * image.channels;
    if (image.data.size() != n) {
        throw std::invalid_argument("write_pnm: data size does not match image extents");
    }
    auto os = open_out(path);
    os << (image.channels == 3 ? "P6" : "P5") << "\n"
       << image.width << " " << image.height << "\n255\n";
    std::vector<unsigned char> bytes(n);
    std::transform(image.data.begin(), image.data.end(), bytes.begin(), quantize8);
    os.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(n));
    if (!os) {
        throw DataError(path.string() + ": write failed");
    }
}

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream &is) {
    std::string tok;
    int c;
    while ((c = is.get()) != EOF) {
        if (c == '#') {
            while ((c = is.get()) != EOF && c != '\n') {
            }
            continue;
        }
        if (std::isspace(c)) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

} // namespace

Image read_pnm(const fs::path &path) {
    auto is = open_in(path);
    const std::string magic = pnm_token(is);
    Image img;
    if (magic == "P6") {
        img.channels = 3;
    } else if (magic == "P5") {
        img.channels = 1;
    } else {
        throw DataError(path.string() + ": not a binary PPM/PGM file");
    }
    try {
        img.width = std::stoi(pnm_token(is));
        img.height = std::stoi(pnm_token(is));
        const int maxval = std::stoi(pnm_token(is));
        if (img.width <= 0 || img.height <= 0 || maxval != 255) {
            throw DataError("");
        }
    } catch (const std::exception &) {
        throw DataError(path.string() + ": malformed PNM header (8-bit maxval 255 required)");
    }
    const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
    std::vector<unsigned char> bytes(n);
    is.read(reinterpret_cast<char *>(bytes.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw DataError(path.string() + ": truncated image data");
    }
    img.data.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        img.data[i] = bytes[i] / 255.0;
    }
    return img;
}

} // namespace atlasgs
