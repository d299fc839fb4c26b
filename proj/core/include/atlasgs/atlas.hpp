// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Patch-based Gaussian representation. A patch owns a center and four corner
// feature vectors per branch (geometry, appearance) anchored at the UV corners
// (0,0), (1,0), (1,1), (0,1). Any UV query inside the unit square decodes one
// 3D Gaussian: features are blended with softmax corner weights
//
//   w_k(q) = softmax_k( enc(q) . (F_k + enc(u_k)) / sqrt(d) )
//
// and passed through small MLP heads. The decoder has no parameters whose
// size depends on how many UV samples are drawn.

#pragma once

#include "atlasgs/nn.hpp"
#include "atlasgs/rng.hpp"
#include "atlasgs/tensor.hpp"

#include <array>
#include <string>
#include <vector>

namespace atlasgs {

using Vec3 = std::array<double, 3>;

/// Corner anchors in UV space, in corner order.
inline constexpr std::array<std::array<double, 2>, 4> kCornerUV = {
    {{0.0, 0.0}, {1.0, 0.0}, {1.0, 1.0}, {0.0, 1.0}}};

inline constexpr std::size_t kCorners = 4;
/// Pre-activation width of the attribute head: scale 3, rotation 4,
/// opacity 1, color 3.
inline constexpr std::size_t kAttributeWidth = 11;

struct UV {
    double u = 0.0;
    double v = 0.0;
};

/// One atlas chart with row-major 4 x d corner features per branch.
struct Patch {
    Vec3 center{};
    std::vector<double> geom;
    std::vector<double> app;
};

struct Gaussian3D {
    Vec3 mean{};
    Vec3 scale{1.0, 1.0, 1.0};
    std::array<double, 4> rotation{1.0, 0.0, 0.0, 0.0}; // (w, x, y, z)
    double opacity = 1.0;
    Vec3 color{};
};

/// Unit quaternion, positive scales, opacity and color in [0, 1].
bool satisfies_invariants(const Gaussian3D &g, double quat_tol = 1e-6);

/// Batched Gaussians as differentiable tensors with N rows each.
struct GaussianTensors {
    Tensor means;     // [N,3]
    Tensor scales;    // [N,3]
    Tensor rotations; // [N,4]
    Tensor opacities; // [N,1]
    Tensor colors;    // [N,3]

    std::size_t size() const { return means.defined() ? means.dim(0) : 0; }
    std::vector<Gaussian3D> to_gaussians() const;
    static GaussianTensors from_gaussians(const std::vector<Gaussian3D> &gaussians);
};

/// Maps attribute pre-activations a[N,11] to (scale, rotation, opacity, color):
/// s = clamp(exp(a0..2), 1e-6, 1), r = normalize(a3..6 + (1,0,0,0)),
/// o = sigmoid(a7), c = sigmoid(a8..10).
struct Attributes {
    Tensor scales;
    Tensor rotations;
    Tensor opacities;
    Tensor colors;
};
Attributes activate_attributes(const Tensor &pre);

inline constexpr double kMinScale = 1e-6;
inline constexpr double kMaxScale = 1.0;

/// alpha x alpha cell centers ((i+0.5)/alpha, (j+0.5)/alpha), i outer and j
/// inner, i.e. sorted lexicographically by (u, v).
std::vector<UV> sample_uv_grid(std::size_t alpha);

/// `count` i.i.d. points uniform in [0,1]^2.
std::vector<UV> sample_uv_random(std::size_t count, Rng &rng);

/// [M*S, 2] tensor holding the same UV list for each of M patches.
Tensor uv_rows(const std::vector<UV> &uv, std::size_t patches);
/// [M*S, 2] tensor from per-patch lists (all of equal length S).
Tensor uv_rows(const std::vector<std::vector<UV>> &per_patch);

enum class CornerWeightMode {
    learned,  // feature-aware softmax weights
    bilinear, // classic bilinear interpolation weights (ablation)
};

struct AtlasDecoderConfig {
    std::size_t dim = 64;
    std::size_t frequencies = 8;
    std::size_t hidden = 64;
    CornerWeightMode weight_mode = CornerWeightMode::learned;
    /// One UV encoder for both branches instead of one per branch.
    bool shared_uv_encoder = false;
    /// Initial Gaussian scale encoded in the attribute head bias.
    double initial_scale = 0.04;
};

enum class Branch { geometry, appearance };

/// Learnable part of the decoder: UV encoders and the two MLP heads.
class AtlasDecoder {
public:
    AtlasDecoder() = default;
    AtlasDecoder(ParamStore &store, const std::string &name, const AtlasDecoderConfig &config,
                 Rng &rng);

    const AtlasDecoderConfig &config() const { return config_; }
    const FourierEncoder &uv_encoder(Branch branch) const;
    FourierEncoder &uv_encoder(Branch branch);
    Mlp &position_head() { return position_head_; }
    Mlp &attribute_head() { return attribute_head_; }
    const Mlp &position_head() const { return position_head_; }
    const Mlp &attribute_head() const { return attribute_head_; }

    /// Corner weights [M*S, 4] for UV rows [M*S, 2] and corner features
    /// [M*4, d] of M patches.
    Tensor corner_weights(const Tensor &uv, const Tensor &features, Branch branch) const;
    /// Weighted corner blend [M*S, d].
    Tensor blend(const Tensor &uv, const Tensor &features, Branch branch) const;
    /// Gaussian centers [M*S, 3]: MLP(blend(geom)) + patch center.
    Tensor decode_positions(const Tensor &uv, const Tensor &centers, const Tensor &geom) const;
    /// Attribute pre-activations [M*S, 11].
    Tensor decode_attribute_logits(const Tensor &uv, const Tensor &app) const;
    /// Full decode, patch-major and UV-minor ordering.
    GaussianTensors decode(const Tensor &uv, const Tensor &centers, const Tensor &geom,
                           const Tensor &app) const;

private:
    AtlasDecoderConfig config_;
    FourierEncoder geom_encoder_;
    FourierEncoder app_encoder_;
    Mlp position_head_;
    Mlp attribute_head_;
};

// -- per-patch convenience entry points (no gradient recording) ----------------

/// Raw sin/cos encoding of a UV point before the MLP projection.
std::vector<double> uv_sinusoid(UV p, std::size_t frequencies);
std::vector<double> positional_encode_2d(UV p, const FourierEncoder &encoder);
std::array<double, 4> corner_weights(UV q, const std::vector<double> &corner_features,
                                     const AtlasDecoder &decoder, Branch branch);
Vec3 decode_position(UV q, const Patch &patch, const AtlasDecoder &decoder);
/// Scale, rotation, opacity and color; the mean is left at zero.
Gaussian3D decode_attributes(UV q, const Patch &patch, const AtlasDecoder &decoder);
/// M * S Gaussians, patch-major.
std::vector<Gaussian3D> decode_atlas(const std::vector<Patch> &patches,
                                     const AtlasDecoder &decoder, const std::vector<UV> &uv);

/// Packs patches into (centers [M,3], geom [M*4,d], app [M*4,d]).
struct PatchTensors {
    Tensor centers;
    Tensor geom;
    Tensor app;
};
PatchTensors pack_patches(const std::vector<Patch> &patches);

} // namespace atlasgs
