// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/render.hpp"

#include "atlasgs/parallel.hpp"
#include "dual.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atlasgs {

namespace {

constexpr std::size_t kJacobianInputs = 10; // mean 3, scale 3, quaternion 4
using Dual10 = detail::Dual<kJacobianInputs>;

template <typename T>
struct Splat2D {
    T u, v;            // projected mean (pixels)
    T ca, cb, cc;      // conic = inverse 2-D covariance (xx, xy, yy)
    T z;               // camera depth
    T sxx, sxy, syy;   // 2-D covariance including the floor
};

template <typename T>
void rotation_matrix(const T *q, T *R) {
    using std::sqrt;
    const T n = sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
    const T w = q[0] / n, x = q[1] / n, y = q[2] / n, z = q[3] / n;
    const T one(1.0), two(2.0);
    R[0] = one - two * (y * y + z * z);
    R[1] = two * (x * y - w * z);
    R[2] = two * (x * z + w * y);
    R[3] = two * (x * y + w * z);
    R[4] = one - two * (x * x + z * z);
    R[5] = two * (y * z - w * x);
    R[6] = two * (x * z - w * y);
    R[7] = two * (y * z + w * x);
    R[8] = one - two * (x * x + y * y);
}

template <typename T>
void covariance(const T *scale, const T *q, T *S) {
    T R[9];
    rotation_matrix(q, R);
    const T s2[3] = {scale[0] * scale[0], scale[1] * scale[1], scale[2] * scale[2]};
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            S[i * 3 + j] = R[i * 3 + 0] * R[j * 3 + 0] * s2[0] + R[i * 3 + 1] * R[j * 3 + 1] * s2[1] +
                           R[i * 3 + 2] * R[j * 3 + 2] * s2[2];
        }
    }
}

template <typename T>
Splat2D<T> project_cov(const T *mean, const T *S, const Camera &cam) {
    const auto &m = cam.world_to_camera;
    const T fx(cam.fx), fy(cam.fy), cx(cam.cx), cy(cam.cy);
    const T tx = T(m[0]) * mean[0] + T(m[1]) * mean[1] + T(m[2]) * mean[2] + T(m[3]);
    const T ty = T(m[4]) * mean[0] + T(m[5]) * mean[1] + T(m[6]) * mean[2] + T(m[7]);
    const T tz = T(m[8]) * mean[0] + T(m[9]) * mean[1] + T(m[10]) * mean[2] + T(m[11]);
    const T j00 = fx / tz;
    const T j02 = -(fx * tx) / (tz * tz);
    const T j11 = fy / tz;
    const T j12 = -(fy * ty) / (tz * tz);
    // rows of J * W
    T A[3], B[3];
    for (int c = 0; c < 3; ++c) {
        A[c] = j00 * T(m[c]) + j02 * T(m[8 + c]);
        B[c] = j11 * T(m[4 + c]) + j12 * T(m[8 + c]);
    }
    T SA[3], SB[3];
    for (int i = 0; i < 3; ++i) {
        SA[i] = S[i * 3 + 0] * A[0] + S[i * 3 + 1] * A[1] + S[i * 3 + 2] * A[2];
        SB[i] = S[i * 3 + 0] * B[0] + S[i * 3 + 1] * B[1] + S[i * 3 + 2] * B[2];
    }
    const T floor(kCovarianceFloor);
    Splat2D<T> out;
    out.sxx = A[0] * SA[0] + A[1] * SA[1] + A[2] * SA[2] + floor;
    out.sxy = A[0] * SB[0] + A[1] * SB[1] + A[2] * SB[2];
    out.syy = B[0] * SB[0] + B[1] * SB[1] + B[2] * SB[2] + floor;
    const T det = out.sxx * out.syy - out.sxy * out.sxy;
    out.ca = out.syy / det;
    out.cb = -out.sxy / det;
    out.cc = out.sxx / det;
    out.u = fx * tx / tz + cx;
    out.v = fy * ty / tz + cy;
    out.z = tz;
    return out;
}

template <typename T>
Splat2D<T> project_splat(const T *mean, const T *scale, const T *q, const Camera &cam) {
    T S[9];
    covariance(scale, q, S);
    return project_cov(mean, S, cam);
}

double view_margin(const Camera &cam) { return 0.5 * std::max(cam.width, cam.height); }

bool in_view(double u, double v, double z, const Camera &cam) {
    if (!(z > cam.near && z < cam.far)) {
        return false;
    }
    const double margin = view_margin(cam);
    return u >= -margin && u <= (cam.width - 1) + margin && v >= -margin &&
           v <= (cam.height - 1) + margin;
}

// Visible splats in global depth order (ties broken by input index).
struct Prepared {
    std::vector<std::size_t> source; // input index per sorted slot
    std::vector<double> u, v, ca, cb, cc, z, opacity, color, radius;
    std::size_t size() const { return source.size(); }
};

Prepared prepare(std::span<const double> means, std::span<const double> scales,
                 std::span<const double> rots, std::span<const double> opac,
                 std::span<const double> cols, const Camera &cam) {
    cam.validate();
    const std::size_t n = opac.size();
    struct Candidate {
        double z;
        std::size_t index;
        Splat2D<double> s;
    };
    std::vector<Candidate> vis;
    for (std::size_t i = 0; i < n; ++i) {
        const double *q = rots.data() + i * 4;
        if (q[0] == 0.0 && q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0) {
            throw std::invalid_argument("rasterize: zero quaternion for Gaussian " +
                                        std::to_string(i));
        }
        const double tz = cam.to_camera({means[i * 3], means[i * 3 + 1], means[i * 3 + 2]})[2];
        if (!(tz > cam.near && tz < cam.far)) {
            continue;
        }
        const Splat2D<double> s = project_splat(means.data() + i * 3, scales.data() + i * 3, q, cam);
        if (!in_view(s.u, s.v, s.z, cam)) {
            continue;
        }
        const double det = s.sxx * s.syy - s.sxy * s.sxy;
        if (!(det > 0.0)) {
            throw std::runtime_error("rasterize: singular 2-D covariance for Gaussian " +
                                     std::to_string(i));
        }
        vis.push_back({s.z, i, s});
    }
    std::stable_sort(vis.begin(), vis.end(),
                     [](const Candidate &a, const Candidate &b) { return a.z < b.z; });
    Prepared p;
    const std::size_t k = vis.size();
    p.source.resize(k);
    for (auto *arr : {&p.u, &p.v, &p.ca, &p.cb, &p.cc, &p.z, &p.opacity, &p.radius}) {
        arr->resize(k);
    }
    p.color.resize(k * 3);
    for (std::size_t j = 0; j < k; ++j) {
        const auto &c = vis[j];
        const std::size_t i = c.index;
        p.source[j] = i;
        p.u[j] = c.s.u;
        p.v[j] = c.s.v;
        p.ca[j] = c.s.ca;
        p.cb[j] = c.s.cb;
        p.cc[j] = c.s.cc;
        p.z[j] = c.s.z;
        p.opacity[j] = opac[i];
        for (int ch = 0; ch < 3; ++ch) {
            p.color[j * 3 + ch] = cols[i * 3 + ch];
        }
        // Beyond this distance o * exp(-0.5 d^T conic d) < 1/255 for every pixel.
        const double mid = 0.5 * (c.s.sxx + c.s.syy);
        const double disc = std::sqrt(std::max(0.0, mid * mid - (c.s.sxx * c.s.syy - c.s.sxy * c.s.sxy)));
        const double lmax = mid + disc;
        const double ratio = 255.0 * opac[i];
        p.radius[j] = ratio > 1.0 ? std::sqrt(2.0 * std::log(ratio) * lmax) + 1.0 : -1.0;
    }
    return p;
}

// Accumulates one splat into a pixel; returns false when skipped.
struct PixelState {
    double T = 1.0;
    double rgb[3] = {0.0, 0.0, 0.0};
    double alpha = 0.0;
    double depth = 0.0;
};

inline bool splat_alpha(const Prepared &p, std::size_t k, double px, double py, double &g,
                        double &a) {
    const double dx = px - p.u[k];
    const double dy = py - p.v[k];
    const double power = -0.5 * (p.ca[k] * dx * dx + p.cc[k] * dy * dy) - p.cb[k] * dx * dy;
    g = std::exp(power);
    a = std::min(kMaxSplatAlpha, p.opacity[k] * g);
    return a >= kMinSplatAlpha;
}

inline void blend(const Prepared &p, std::size_t k, double a, PixelState &s) {
    const double w = s.T * a;
    s.rgb[0] += w * p.color[k * 3];
    s.rgb[1] += w * p.color[k * 3 + 1];
    s.rgb[2] += w * p.color[k * 3 + 2];
    s.alpha += w;
    s.depth += w * p.z[k];
    s.T *= (1.0 - a);
}

void write_pixel(const PixelState &s, const Rgb &bg, std::size_t pix, double *rgb, double *alpha,
                 double *depth) {
    for (int ch = 0; ch < 3; ++ch) {
        rgb[pix * 3 + ch] = s.rgb[ch] + s.T * bg[ch];
    }
    alpha[pix] = s.alpha;
    depth[pix] = s.depth;
}

struct TileGrid {
    int tile = 16;
    int tiles_x = 0;
    int tiles_y = 0;
    std::vector<std::vector<std::uint32_t>> lists;
};

TileGrid bin_tiles(const Prepared &p, const Camera &cam, int tile) {
    if (tile <= 0) {
        throw std::invalid_argument("rasterize: tile size must be positive");
    }
    TileGrid grid;
    grid.tile = tile;
    grid.tiles_x = (cam.width + tile - 1) / tile;
    grid.tiles_y = (cam.height + tile - 1) / tile;
    grid.lists.resize(static_cast<std::size_t>(grid.tiles_x * grid.tiles_y));
    for (std::size_t k = 0; k < p.size(); ++k) {
        const double r = p.radius[k];
        if (r < 0.0) {
            continue;
        }
        const double x0 = std::max(0.0, p.u[k] - r);
        const double x1 = std::min(cam.width - 1.0, p.u[k] + r);
        const double y0 = std::max(0.0, p.v[k] - r);
        const double y1 = std::min(cam.height - 1.0, p.v[k] + r);
        if (x0 > x1 || y0 > y1) {
            continue;
        }
        const int tx0 = static_cast<int>(std::floor(x0)) / tile;
        const int tx1 = static_cast<int>(std::ceil(x1)) / tile;
        const int ty0 = static_cast<int>(std::floor(y0)) / tile;
        const int ty1 = static_cast<int>(std::ceil(y1)) / tile;
        for (int ty = ty0; ty <= std::min(ty1, grid.tiles_y - 1); ++ty) {
            for (int tx = tx0; tx <= std::min(tx1, grid.tiles_x - 1); ++tx) {
                grid.lists[static_cast<std::size_t>(ty * grid.tiles_x + tx)].push_back(
                    static_cast<std::uint32_t>(k));
            }
        }
    }
    return grid;
}

void forward_tiled(const Prepared &p, const TileGrid &grid, const Camera &cam, const Rgb &bg,
                   double *rgb, double *alpha, double *depth) {
    const std::size_t tiles = grid.lists.size();
    parallel_for(tiles, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            const int tx = static_cast<int>(t) % grid.tiles_x;
            const int ty = static_cast<int>(t) / grid.tiles_x;
            const auto &list = grid.lists[t];
            for (int y = ty * grid.tile; y < std::min(cam.height, (ty + 1) * grid.tile); ++y) {
                for (int x = tx * grid.tile; x < std::min(cam.width, (tx + 1) * grid.tile); ++x) {
                    PixelState s;
                    double g, a;
                    for (std::uint32_t k : list) {
                        if (splat_alpha(p, k, x, y, g, a)) {
                            blend(p, k, a, s);
                        }
                    }
                    write_pixel(s, bg, static_cast<std::size_t>(y * cam.width + x), rgb, alpha,
                                depth);
                }
            }
        }
    });
}

// Per-slot gradient layout.
enum : std::size_t { kGu, kGv, kGa, kGb, kGc, kGz, kGo, kGr, kGg, kGbl, kSlotGrads };

void backward_tiled(const Prepared &p, const TileGrid &grid, const Camera &cam, const Rgb &bg,
                    const double *g_rgb, const double *g_alpha, const double *g_depth,
                    std::vector<double> &slot_grads) {
    const std::size_t tiles = grid.lists.size();
    const std::size_t workers = std::min(thread_count(), std::max<std::size_t>(1, tiles));
    std::vector<std::vector<double>> partial(workers,
                                             std::vector<double>(p.size() * kSlotGrads, 0.0));
    parallel_for(tiles, [&](std::size_t worker, std::size_t begin, std::size_t end) {
        auto &acc = partial[worker];
        struct Hit {
            std::uint32_t k;
            double g, a, T;
        };
        std::vector<Hit> hits;
        for (std::size_t t = begin; t < end; ++t) {
            const int tx = static_cast<int>(t) % grid.tiles_x;
            const int ty = static_cast<int>(t) / grid.tiles_x;
            const auto &list = grid.lists[t];
            for (int y = ty * grid.tile; y < std::min(cam.height, (ty + 1) * grid.tile); ++y) {
                for (int x = tx * grid.tile; x < std::min(cam.width, (tx + 1) * grid.tile); ++x) {
                    const std::size_t pix = static_cast<std::size_t>(y * cam.width + x);
                    const double gr[3] = {g_rgb[pix * 3], g_rgb[pix * 3 + 1], g_rgb[pix * 3 + 2]};
                    const double ga = g_alpha[pix];
                    const double gd = g_depth[pix];
                    if (gr[0] == 0.0 && gr[1] == 0.0 && gr[2] == 0.0 && ga == 0.0 && gd == 0.0) {
                        continue;
                    }
                    // Recompute the front-to-back pass for this pixel.
                    hits.clear();
                    double T = 1.0;
                    double g, a;
                    for (std::uint32_t k : list) {
                        if (splat_alpha(p, k, x, y, g, a)) {
                            hits.push_back({k, g, a, T});
                            T *= (1.0 - a);
                        }
                    }
                    // Suffix sums of later contributions, starting from the background.
                    double suf[5] = {T * bg[0], T * bg[1], T * bg[2], 0.0, 0.0};
                    for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
                        const std::size_t k = it->k;
                        const double w = it->T * it->a;
                        const double f[5] = {p.color[k * 3], p.color[k * 3 + 1], p.color[k * 3 + 2],
                                             1.0, p.z[k]};
                        const double go[5] = {gr[0], gr[1], gr[2], ga, gd};
                        const double inv = 1.0 / (1.0 - it->a);
                        double d_alpha = 0.0;
                        for (int c = 0; c < 5; ++c) {
                            d_alpha += go[c] * (it->T * f[c] - suf[c] * inv);
                        }
                        double *s = acc.data() + k * kSlotGrads;
                        s[kGr] += gr[0] * w;
                        s[kGg] += gr[1] * w;
                        s[kGbl] += gr[2] * w;
                        s[kGz] += gd * w;
                        if (p.opacity[k] * it->g < kMaxSplatAlpha) {
                            s[kGo] += d_alpha * it->g;
                            const double d_power = d_alpha * it->a;
                            const double dx = x - p.u[k];
                            const double dy = y - p.v[k];
                            s[kGu] += d_power * (p.ca[k] * dx + p.cb[k] * dy);
                            s[kGv] += d_power * (p.cb[k] * dx + p.cc[k] * dy);
                            s[kGa] += d_power * (-0.5 * dx * dx);
                            s[kGb] += d_power * (-dx * dy);
                            s[kGc] += d_power * (-0.5 * dy * dy);
                        }
                        for (int c = 0; c < 5; ++c) {
                            suf[c] += w * f[c];
                        }
                    }
                }
            }
        }
    });
    slot_grads.assign(p.size() * kSlotGrads, 0.0);
    for (const auto &part : partial) {
        for (std::size_t i = 0; i < slot_grads.size(); ++i) {
            slot_grads[i] += part[i];
        }
    }
}

} // namespace

Mat3 quat_to_rotation(const std::array<double, 4> &q) {
    if (q[0] == 0.0 && q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0) {
        throw std::invalid_argument("quat_to_rotation: zero quaternion");
    }
    Mat3 R;
    rotation_matrix(q.data(), R.data());
    return R;
}

Mat3 covariance_3d(const Vec3 &scale, const std::array<double, 4> &q) {
    if (q[0] == 0.0 && q[1] == 0.0 && q[2] == 0.0 && q[3] == 0.0) {
        throw std::invalid_argument("covariance_3d: zero quaternion");
    }
    Mat3 S;
    covariance(scale.data(), q.data(), S.data());
    return S;
}

Projection project_gaussian(const Vec3 &mean, const Mat3 &cov3d, const Camera &camera) {
    camera.validate();
    Projection out;
    const double tz = camera.to_camera(mean)[2];
    out.depth = tz;
    if (!(tz > camera.near && tz < camera.far)) {
        return out;
    }
    const Splat2D<double> s = project_cov(mean.data(), cov3d.data(), camera);
    out.mean2d = {s.u, s.v};
    out.cov2d = {s.sxx, s.sxy, s.syy};
    out.visible = in_view(s.u, s.v, s.z, camera);
    return out;
}

RenderOutput RenderTensors::to_output() const {
    RenderOutput out;
    out.height = static_cast<int>(alpha.dim(0));
    out.width = static_cast<int>(alpha.dim(1));
    out.rgb.assign(rgb.values().begin(), rgb.values().end());
    out.alpha.assign(alpha.values().begin(), alpha.values().end());
    out.depth.assign(depth.values().begin(), depth.values().end());
    return out;
}

RenderTensors rasterize(const GaussianTensors &gs, const Camera &cam, const Rgb &background,
                        const RasterSettings &settings) {
    const std::size_t n = gs.size();
    if (gs.scales.numel() != n * 3 || gs.rotations.numel() != n * 4 ||
        gs.opacities.numel() != n || gs.colors.numel() != n * 3) {
        throw ShapeError("rasterize: Gaussian tensors disagree on count");
    }
    auto prepared = std::make_shared<Prepared>(prepare(gs.means.values(), gs.scales.values(),
                                                       gs.rotations.values(),
                                                       gs.opacities.values(), gs.colors.values(),
                                                       cam));
    auto grid = std::make_shared<TileGrid>(bin_tiles(*prepared, cam, settings.tile_size));
    const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
    // Packed per pixel: r, g, b, alpha, depth.
    std::vector<double> rgb(pixels * 3), alpha(pixels), depth(pixels);
    forward_tiled(*prepared, *grid, cam, background, rgb.data(), alpha.data(), depth.data());
    std::vector<double> packed(pixels * 5);
    for (std::size_t i = 0; i < pixels; ++i) {
        packed[i * 5 + 0] = rgb[i * 3 + 0];
        packed[i * 5 + 1] = rgb[i * 3 + 1];
        packed[i * 5 + 2] = rgb[i * 3 + 2];
        packed[i * 5 + 3] = alpha[i];
        packed[i * 5 + 4] = depth[i];
    }
    auto mn = gs.means.node();
    auto sn = gs.scales.node();
    auto rn = gs.rotations.node();
    auto on = gs.opacities.node();
    auto cn = gs.colors.node();
    const Camera camera = cam;
    const Rgb bg = background;
    const Tensor out = detail::make_result(
        "rasterize", Shape{pixels, 5}, std::move(packed),
        {&gs.means, &gs.scales, &gs.rotations, &gs.opacities, &gs.colors},
        [=](detail::Node &o) {
            std::vector<double> g_rgb(pixels * 3), g_alpha(pixels), g_depth(pixels);
            for (std::size_t i = 0; i < pixels; ++i) {
                for (int c = 0; c < 3; ++c) {
                    g_rgb[i * 3 + c] = o.grad[i * 5 + c];
                }
                g_alpha[i] = o.grad[i * 5 + 3];
                g_depth[i] = o.grad[i * 5 + 4];
            }
            std::vector<double> slot;
            backward_tiled(*prepared, *grid, camera, bg, g_rgb.data(), g_alpha.data(),
                           g_depth.data(), slot);
            const Prepared &p = *prepared;
            for (std::size_t k = 0; k < p.size(); ++k) {
                const double *s = slot.data() + k * kSlotGrads;
                const std::size_t i = p.source[k];
                if (on->requires_grad) {
                    on->ensure_grad()[i] += s[kGo];
                }
                if (cn->requires_grad) {
                    auto &gc = cn->ensure_grad();
                    gc[i * 3] += s[kGr];
                    gc[i * 3 + 1] += s[kGg];
                    gc[i * 3 + 2] += s[kGbl];
                }
                const bool geo = mn->requires_grad || sn->requires_grad || rn->requires_grad;
                const bool any = s[kGu] != 0.0 || s[kGv] != 0.0 || s[kGa] != 0.0 ||
                                 s[kGb] != 0.0 || s[kGc] != 0.0 || s[kGz] != 0.0;
                if (!geo || !any) {
                    continue;
                }
                Dual10 mean[3], scl[3], quat[4];
                for (int c = 0; c < 3; ++c) {
                    mean[c] = Dual10::variable(mn->value[i * 3 + c], c);
                    scl[c] = Dual10::variable(sn->value[i * 3 + c], 3 + c);
                }
                for (int c = 0; c < 4; ++c) {
                    quat[c] = Dual10::variable(rn->value[i * 4 + c], 6 + c);
                }
                const Splat2D<Dual10> sp = project_splat(mean, scl, quat, camera);
                std::array<double, kJacobianInputs> gin{};
                for (std::size_t d = 0; d < kJacobianInputs; ++d) {
                    gin[d] = s[kGu] * sp.u.d[d] + s[kGv] * sp.v.d[d] + s[kGa] * sp.ca.d[d] +
                             s[kGb] * sp.cb.d[d] + s[kGc] * sp.cc.d[d] + s[kGz] * sp.z.d[d];
                }
                if (mn->requires_grad) {
                    auto &g = mn->ensure_grad();
                    for (int c = 0; c < 3; ++c) g[i * 3 + c] += gin[c];
                }
                if (sn->requires_grad) {
                    auto &g = sn->ensure_grad();
                    for (int c = 0; c < 3; ++c) g[i * 3 + c] += gin[3 + c];
                }
                if (rn->requires_grad) {
                    auto &g = rn->ensure_grad();
                    for (int c = 0; c < 4; ++c) g[i * 4 + c] += gin[6 + c];
                }
            }
        });
    const std::size_t H = static_cast<std::size_t>(cam.height);
    const std::size_t W = static_cast<std::size_t>(cam.width);
    RenderTensors r;
    r.rgb = reshape(slice_cols(out, 0, 3), {H, W, 3});
    r.alpha = reshape(slice_cols(out, 3, 4), {H, W});
    r.depth = reshape(slice_cols(out, 4, 5), {H, W});
    return r;
}

RenderOutput rasterize(const std::vector<Gaussian3D> &gaussians, const Camera &camera,
                       const Rgb &background, const RasterSettings &settings) {
    NoGradGuard no_grad;
    return rasterize(GaussianTensors::from_gaussians(gaussians), camera, background, settings)
        .to_output();
}

RenderOutput rasterize_reference(const std::vector<Gaussian3D> &gaussians, const Camera &cam,
                                 const Rgb &bg) {
    const GaussianTensors gs = GaussianTensors::from_gaussians(gaussians);
    const Prepared p = prepare(gs.means.values(), gs.scales.values(), gs.rotations.values(),
                               gs.opacities.values(), gs.colors.values(), cam);
    RenderOutput out;
    out.width = cam.width;
    out.height = cam.height;
    const std::size_t pixels = static_cast<std::size_t>(cam.width) * cam.height;
    out.rgb.resize(pixels * 3);
    out.alpha.resize(pixels);
    out.depth.resize(pixels);
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            PixelState s;
            double g, a;
            for (std::size_t k = 0; k < p.size(); ++k) {
                if (splat_alpha(p, k, x, y, g, a)) {
                    blend(p, k, a, s);
                }
            }
            write_pixel(s, bg, static_cast<std::size_t>(y * cam.width + x), out.rgb.data(),
                        out.alpha.data(), out.depth.data());
        }
    }
    return out;
}

double psnr(const std::vector<double> &a, const std::vector<double> &b) {
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("psnr: size mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    const double m = s / static_cast<double>(a.size());
    return m > 0.0 ? 10.0 * std::log10(1.0 / m) : std::numeric_limits<double>::infinity();
}

} // namespace atlasgs
