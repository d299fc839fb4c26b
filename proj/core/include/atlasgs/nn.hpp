// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Parameter storage and the neural building blocks shared by the VAE and the
// diffusion denoiser.

#pragma once

#include "atlasgs/rng.hpp"
#include "atlasgs/tensor.hpp"

#include <map>
#include <string>
#include <vector>

namespace atlasgs {

/// Named, ordered collection of trainable leaf tensors.
class ParamStore {
public:
    /// Registers a parameter; names must be unique.
    Tensor &add(const std::string &name, Shape shape, std::vector<double> values);
    Tensor &add_uniform(const std::string &name, Shape shape, double bound, Rng &rng);
    Tensor &add_constant(const std::string &name, Shape shape, double value);

    bool contains(const std::string &name) const { return index_.count(name) != 0; }
    Tensor &get(const std::string &name);
    const Tensor &get(const std::string &name) const;

    const std::vector<std::pair<std::string, Tensor>> &entries() const { return entries_; }
    std::vector<std::pair<std::string, Tensor>> &entries() { return entries_; }

    /// Total scalar count over all parameters.
    std::size_t count() const;
    void zero_grad();

private:
    std::vector<std::pair<std::string, Tensor>> entries_;
    std::map<std::string, std::size_t> index_;
};

/// Affine map with weight [in, out] ~ U(+-1/sqrt(in)) and zero bias.
struct Linear {
    Tensor weight;
    Tensor bias;

    Linear() = default;
    Linear(ParamStore &store, const std::string &name, std::size_t in, std::size_t out, Rng &rng,
           bool with_bias = true);
    Tensor operator()(const Tensor &x) const { return linear(x, weight, bias); }
    std::size_t in_features() const { return weight.dim(0); }
    std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
    Tensor gamma;
    Tensor beta;

    LayerNorm() = default;
    LayerNorm(ParamStore &store, const std::string &name, std::size_t dim);
    Tensor operator()(const Tensor &x) const { return layer_norm(x, gamma, beta); }
};

/// Linear -> GELU -> Linear.
struct Mlp {
    Linear fc1;
    Linear fc2;

    Mlp() = default;
    Mlp(ParamStore &store, const std::string &name, std::size_t in, std::size_t hidden,
        std::size_t out, Rng &rng);
    Tensor operator()(const Tensor &x) const { return fc2(gelu(fc1(x))); }
};

/// Weights of one pre-norm transformer block (attention + feed-forward).
struct AttentionParams {
    std::size_t heads = 1;
    std::size_t dim = 0;
    LayerNorm norm_q;
    LayerNorm norm_kv; // used by cross-attention only
    LayerNorm norm_ff;
    Linear wq, wk, wv, wo;
    Mlp ff;

    AttentionParams() = default;
    AttentionParams(ParamStore &store, const std::string &name, std::size_t dim,
                    std::size_t heads, std::size_t ff_ratio, Rng &rng);
    std::size_t head_dim() const { return dim / heads; }
};

/// x + Attn(LN(x)) followed by x + FFN(LN(x)). With groups > 1, tokens only
/// attend within their own contiguous group of rows.
Tensor self_attention(const Tensor &x, const AttentionParams &p, std::size_t groups = 1);

/// q + Attn(LN(q), LN(kv)) followed by q + FFN(LN(q)).
Tensor cross_attention(const Tensor &q, const Tensor &kv, const AttentionParams &p);

/// Raw sinusoidal features of points p[N, D]: for every coordinate c and
/// frequency k, the pair (sin(2^k pi p_c), cos(2^k pi p_c)). Output [N, 2*D*K].
Tensor sinusoidal_features(const Tensor &points, std::size_t frequencies);

/// Sinusoidal features followed by an MLP projection to `out` channels.
struct FourierEncoder {
    std::size_t input_dims = 0;
    std::size_t frequencies = 0;
    Mlp mlp;

    FourierEncoder() = default;
    FourierEncoder(ParamStore &store, const std::string &name, std::size_t input_dims,
                   std::size_t frequencies, std::size_t out, Rng &rng);
    Tensor operator()(const Tensor &points) const {
        return mlp(sinusoidal_features(points, frequencies));
    }
};

} // namespace atlasgs
