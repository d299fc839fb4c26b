// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/atlas.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace atlasgs {

bool satisfies_invariants(const Gaussian3D &g, double quat_tol) {
    const auto &r = g.rotation;
    const double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    if (std::abs(n - 1.0) > quat_tol) {
        return false;
    }
    for (double s : g.scale) {
        if (!(s > 0.0) || !std::isfinite(s)) {
            return false;
        }
    }
    if (!(g.opacity >= 0.0 && g.opacity <= 1.0)) {
        return false;
    }
    for (double c : g.color) {
        if (!(c >= 0.0 && c <= 1.0)) {
            return false;
        }
    }
    for (double m : g.mean) {
        if (!std::isfinite(m)) {
            return false;
        }
    }
    return true;
}

std::vector<Gaussian3D> GaussianTensors::to_gaussians() const {
    const std::size_t n = size();
    std::vector<Gaussian3D> out(n);
    auto m = means.values();
    auto s = scales.values();
    auto r = rotations.values();
    auto o = opacities.values();
    auto c = colors.values();
    for (std::size_t i = 0; i < n; ++i) {
        auto &g = out[i];
        for (int k = 0; k < 3; ++k) {
            g.mean[k] = m[i * 3 + k];
            g.scale[k] = s[i * 3 + k];
            g.color[k] = c[i * 3 + k];
        }
        for (int k = 0; k < 4; ++k) {
            g.rotation[k] = r[i * 4 + k];
        }
        g.opacity = o[i];
    }
    return out;
}

GaussianTensors GaussianTensors::from_gaussians(const std::vector<Gaussian3D> &gaussians) {
    const std::size_t n = gaussians.size();
    std::vector<double> m(n * 3), s(n * 3), r(n * 4), o(n), c(n * 3);
    for (std::size_t i = 0; i < n; ++i) {
        const auto &g = gaussians[i];
        for (int k = 0; k < 3; ++k) {
            m[i * 3 + k] = g.mean[k];
            s[i * 3 + k] = g.scale[k];
            c[i * 3 + k] = g.color[k];
        }
        for (int k = 0; k < 4; ++k) {
            r[i * 4 + k] = g.rotation[k];
        }
        o[i] = g.opacity;
    }
    return {Tensor({n, 3}, std::move(m)), Tensor({n, 3}, std::move(s)), Tensor({n, 4}, std::move(r)),
            Tensor({n, 1}, std::move(o)), Tensor({n, 3}, std::move(c))};
}

Attributes activate_attributes(const Tensor &pre) {
    if (pre.rank() != 2 || pre.dim(1) != kAttributeWidth) {
        throw ShapeError("attribute pre-activations must be [N, 11], got " +
                         shape_string(pre.shape()));
    }
    static const Tensor identity_offset({4}, std::vector<double>{1.0, 0.0, 0.0, 0.0});
    Attributes a;
    a.scales = clamp(exp(slice_cols(pre, 0, 3)), kMinScale, kMaxScale);
    a.rotations = normalize_rows(slice_cols(pre, 3, 7) + identity_offset);
    a.opacities = sigmoid(slice_cols(pre, 7, 8));
    a.colors = sigmoid(slice_cols(pre, 8, 11));
    return a;
}

std::vector<UV> sample_uv_grid(std::size_t alpha) {
    if (alpha == 0) {
        throw std::invalid_argument("sample_uv_grid: alpha must be >= 1");
    }
    std::vector<UV> out;
    out.reserve(alpha * alpha);
    const double a = static_cast<double>(alpha);
    for (std::size_t i = 0; i < alpha; ++i) {
        for (std::size_t j = 0; j < alpha; ++j) {
            out.push_back({(static_cast<double>(i) + 0.5) / a, (static_cast<double>(j) + 0.5) / a});
        }
    }
    return out;
}

std::vector<UV> sample_uv_random(std::size_t count, Rng &rng) {
    if (count == 0) {
        throw std::invalid_argument("sample_uv_random: count must be >= 1");
    }
    std::vector<UV> out(count);
    for (auto &p : out) {
        p.u = rng.uniform();
        p.v = rng.uniform();
    }
    return out;
}

Tensor uv_rows(const std::vector<UV> &uv, std::size_t patches) {
    if (uv.empty()) {
        throw std::invalid_argument("uv_rows: empty UV list");
    }
    std::vector<double> v;
    v.reserve(patches * uv.size() * 2);
    for (std::size_t m = 0; m < patches; ++m) {
        for (const auto &p : uv) {
            v.push_back(p.u);
            v.push_back(p.v);
        }
    }
    return Tensor({patches * uv.size(), 2}, std::move(v));
}

Tensor uv_rows(const std::vector<std::vector<UV>> &per_patch) {
    if (per_patch.empty() || per_patch.front().empty()) {
        throw std::invalid_argument("uv_rows: empty UV list");
    }
    const std::size_t s = per_patch.front().size();
    std::vector<double> v;
    v.reserve(per_patch.size() * s * 2);
    for (const auto &list : per_patch) {
        if (list.size() != s) {
            throw std::invalid_argument("uv_rows: per-patch UV lists differ in length");
        }
        for (const auto &p : list) {
            v.push_back(p.u);
            v.push_back(p.v);
        }
    }
    return Tensor({per_patch.size() * s, 2}, std::move(v));
}

AtlasDecoder::AtlasDecoder(ParamStore &store, const std::string &name,
                           const AtlasDecoderConfig &config, Rng &rng)
    : config_(config) {
    geom_encoder_ = FourierEncoder(store, name + ".uv_geom", 2, config.frequencies, config.dim, rng);
    if (!config.shared_uv_encoder) {
        app_encoder_ = FourierEncoder(store, name + ".uv_app", 2, config.frequencies, config.dim, rng);
    }
    position_head_ = Mlp(store, name + ".position_head", config.dim, config.hidden, 3, rng);
    attribute_head_ =
        Mlp(store, name + ".attribute_head", config.dim, config.hidden, kAttributeWidth, rng);
    // Start from small splats; a zero bias would put every scale at the clamp.
    auto bias = attribute_head_.fc2.bias.mutable_values();
    for (int k = 0; k < 3; ++k) {
        bias[k] = std::log(config.initial_scale);
    }
}

const FourierEncoder &AtlasDecoder::uv_encoder(Branch branch) const {
    return (branch == Branch::appearance && !config_.shared_uv_encoder) ? app_encoder_
                                                                        : geom_encoder_;
}

FourierEncoder &AtlasDecoder::uv_encoder(Branch branch) {
    return (branch == Branch::appearance && !config_.shared_uv_encoder) ? app_encoder_
                                                                        : geom_encoder_;
}

namespace {

Tensor corner_uv_tensor() {
    std::vector<double> v;
    for (const auto &c : kCornerUV) {
        v.push_back(c[0]);
        v.push_back(c[1]);
    }
    return Tensor({kCorners, 2}, std::move(v));
}

Tensor bilinear_weights(const Tensor &uv) {
    const std::size_t n = uv.dim(0);
    auto p = uv.values();
    std::vector<double> w(n * kCorners);
    for (std::size_t i = 0; i < n; ++i) {
        const double u = p[i * 2], v = p[i * 2 + 1];
        w[i * 4 + 0] = (1 - u) * (1 - v);
        w[i * 4 + 1] = u * (1 - v);
        w[i * 4 + 2] = u * v;
        w[i * 4 + 3] = (1 - u) * v;
    }
    return Tensor({n, kCorners}, std::move(w));
}

} // namespace

Tensor AtlasDecoder::corner_weights(const Tensor &uv, const Tensor &features, Branch branch) const {
    if (features.rank() != 2 || features.dim(0) % kCorners != 0 ||
        features.dim(1) != config_.dim) {
        throw ShapeError("corner features must be [M*4, " + std::to_string(config_.dim) +
                         "], got " + shape_string(features.shape()));
    }
    const std::size_t patches = features.dim(0) / kCorners;
    if (uv.rank() != 2 || uv.dim(1) != 2 || uv.dim(0) % patches != 0) {
        throw ShapeError("uv rows must be [M*S, 2], got " + shape_string(uv.shape()));
    }
    if (config_.weight_mode == CornerWeightMode::bilinear) {
        return bilinear_weights(uv);
    }
    const FourierEncoder &enc = uv_encoder(branch);
    const Tensor query = enc(uv);
    const Tensor anchors = tile_rows(enc(corner_uv_tensor()), patches);
    const Tensor logits = group_logits(query, features + anchors, patches);
    return softmax(scale(logits, 1.0 / std::sqrt(static_cast<double>(config_.dim))));
}

Tensor AtlasDecoder::blend(const Tensor &uv, const Tensor &features, Branch branch) const {
    const std::size_t patches = features.dim(0) / kCorners;
    return group_mix(corner_weights(uv, features, branch), features, patches);
}

Tensor AtlasDecoder::decode_positions(const Tensor &uv, const Tensor &centers,
                                      const Tensor &geom) const {
    const std::size_t patches = geom.dim(0) / kCorners;
    if (centers.rank() != 2 || centers.dim(0) != patches || centers.dim(1) != 3) {
        throw ShapeError("patch centers must be [M, 3], got " + shape_string(centers.shape()));
    }
    const std::size_t samples = uv.dim(0) / patches;
    return position_head_(blend(uv, geom, Branch::geometry)) + repeat_rows(centers, samples);
}

Tensor AtlasDecoder::decode_attribute_logits(const Tensor &uv, const Tensor &app) const {
    return attribute_head_(blend(uv, app, Branch::appearance));
}

GaussianTensors AtlasDecoder::decode(const Tensor &uv, const Tensor &centers, const Tensor &geom,
                                     const Tensor &app) const {
    GaussianTensors out;
    out.means = decode_positions(uv, centers, geom);
    Attributes a = activate_attributes(decode_attribute_logits(uv, app));
    out.scales = a.scales;
    out.rotations = a.rotations;
    out.opacities = a.opacities;
    out.colors = a.colors;
    return out;
}

// -- per-patch entry points ---------------------------------------------------------

std::vector<double> uv_sinusoid(UV p, std::size_t frequencies) {
    NoGradGuard no_grad;
    const Tensor t({1, 2}, std::vector<double>{p.u, p.v});
    const Tensor out = sinusoidal_features(t, frequencies);
    auto v = out.values();
    return {v.begin(), v.end()};
}

std::vector<double> positional_encode_2d(UV p, const FourierEncoder &encoder) {
    NoGradGuard no_grad;
    const Tensor t({1, 2}, std::vector<double>{p.u, p.v});
    const Tensor out = encoder(t);
    auto v = out.values();
    return {v.begin(), v.end()};
}

PatchTensors pack_patches(const std::vector<Patch> &patches) {
    if (patches.empty()) {
        throw std::invalid_argument("pack_patches: no patches");
    }
    const std::size_t d = patches.front().geom.size() / kCorners;
    std::vector<double> c, g, a;
    for (const auto &p : patches) {
        if (p.geom.size() != kCorners * d || p.app.size() != kCorners * d) {
            throw ShapeError("patch corner features must hold 4 x d values");
        }
        c.insert(c.end(), p.center.begin(), p.center.end());
        g.insert(g.end(), p.geom.begin(), p.geom.end());
        a.insert(a.end(), p.app.begin(), p.app.end());
    }
    const std::size_t m = patches.size();
    return {Tensor({m, 3}, std::move(c)), Tensor({m * kCorners, d}, std::move(g)),
            Tensor({m * kCorners, d}, std::move(a))};
}

std::array<double, 4> corner_weights(UV q, const std::vector<double> &corner_features,
                                     const AtlasDecoder &decoder, Branch branch) {
    NoGradGuard no_grad;
    const std::size_t d = corner_features.size() / kCorners;
    const Tensor f({kCorners, d}, corner_features);
    const Tensor uv({1, 2}, std::vector<double>{q.u, q.v});
    const Tensor wt = decoder.corner_weights(uv, f, branch);
    auto w = wt.values();
    return {w[0], w[1], w[2], w[3]};
}

Vec3 decode_position(UV q, const Patch &patch, const AtlasDecoder &decoder) {
    NoGradGuard no_grad;
    const PatchTensors t = pack_patches({patch});
    const Tensor mt = decoder.decode_positions(uv_rows({q}, 1), t.centers, t.geom);
    auto mu = mt.values();
    return {mu[0], mu[1], mu[2]};
}

Gaussian3D decode_attributes(UV q, const Patch &patch, const AtlasDecoder &decoder) {
    NoGradGuard no_grad;
    const PatchTensors t = pack_patches({patch});
    Attributes a = activate_attributes(decoder.decode_attribute_logits(uv_rows({q}, 1), t.app));
    GaussianTensors g{Tensor({1, 3}, 0.0), a.scales, a.rotations, a.opacities, a.colors};
    return g.to_gaussians().front();
}

std::vector<Gaussian3D> decode_atlas(const std::vector<Patch> &patches,
                                     const AtlasDecoder &decoder, const std::vector<UV> &uv) {
    if (uv.empty()) {
        throw std::invalid_argument("decode_atlas: empty UV list");
    }
    NoGradGuard no_grad;
    const PatchTensors t = pack_patches(patches);
    return decoder.decode(uv_rows(uv, patches.size()), t.centers, t.geom, t.app).to_gaussians();
}

} // namespace atlasgs
