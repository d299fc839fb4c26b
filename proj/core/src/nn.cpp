// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/nn.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace atlasgs {

Tensor &ParamStore::add(const std::string &name, Shape shape, std::vector<double> values) {
    if (contains(name)) {
        throw std::invalid_argument("duplicate parameter name: " + name);
    }
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor::parameter(std::move(shape), std::move(values)));
    return entries_.back().second;
}

Tensor &ParamStore::add_uniform(const std::string &name, Shape shape, double bound, Rng &rng) {
    std::vector<double> v(shape_numel(shape));
    for (auto &x : v) {
        x = rng.uniform(-bound, bound);
    }
    return add(name, std::move(shape), std::move(v));
}

Tensor &ParamStore::add_constant(const std::string &name, Shape shape, double value) {
    const std::size_t n = shape_numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, value));
}

Tensor &ParamStore::get(const std::string &name) {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return entries_[it->second].second;
}

const Tensor &ParamStore::get(const std::string &name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw std::out_of_range("unknown parameter: " + name);
    }
    return entries_[it->second].second;
}

std::size_t ParamStore::count() const {
    std::size_t n = 0;
    for (const auto &[name, t] : entries_) {
        n += t.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto &[name, t] : entries_) {
        t.zero_grad();
    }
}

Linear::Linear(ParamStore &store, const std::string &name, std::size_t in, std::size_t out,
               Rng &rng, bool with_bias) {
    weight = store.add_uniform(name + ".weight", {in, out}, 1.0 / std::sqrt(double(in)), rng);
    if (with_bias) {
        bias = store.add_constant(name + ".bias", {out}, 0.0);
    }
}

LayerNorm::LayerNorm(ParamStore &store, const std::string &name, std::size_t dim) {
    gamma = store.add_constant(name + ".gamma", {dim}, 1.0);
    beta = store.add_constant(name + ".beta", {dim}, 0.0);
}

Mlp::Mlp(ParamStore &store, const std::string &name, std::size_t in, std::size_t hidden,
         std::size_t out, Rng &rng)
    : fc1(store, name + ".fc1", in, hidden, rng), fc2(store, name + ".fc2", hidden, out, rng) {}

AttentionParams::AttentionParams(ParamStore &store, const std::string &name, std::size_t dim_,
                                 std::size_t heads_, std::size_t ff_ratio, Rng &rng)
    : heads(heads_), dim(dim_) {
    if (heads == 0 || dim % heads != 0) {
        throw std::invalid_argument(name + ": width " + std::to_string(dim) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    norm_q = LayerNorm(store, name + ".norm_q", dim);
    norm_kv = LayerNorm(store, name + ".norm_kv", dim);
    norm_ff = LayerNorm(store, name + ".norm_ff", dim);
    wq = Linear(store, name + ".wq", dim, dim, rng);
    wk = Linear(store, name + ".wk", dim, dim, rng, false);
    wv = Linear(store, name + ".wv", dim, dim, rng);
    wo = Linear(store, name + ".wo", dim, dim, rng);
    ff = Mlp(store, name + ".ff", dim, dim * ff_ratio, dim, rng);
}

Tensor self_attention(const Tensor &x, const AttentionParams &p, std::size_t groups) {
    const Tensor h = p.norm_q(x);
    const Tensor a = attention(p.wq(h), p.wk(h), p.wv(h), p.heads, groups);
    const Tensor x1 = x + p.wo(a);
    return x1 + p.ff(p.norm_ff(x1));
}

Tensor cross_attention(const Tensor &q, const Tensor &kv, const AttentionParams &p) {
    const Tensor hq = p.norm_q(q);
    const Tensor hkv = p.norm_kv(kv);
    const Tensor a = attention(p.wq(hq), p.wk(hkv), p.wv(hkv), p.heads, 1);
    const Tensor q1 = q + p.wo(a);
    return q1 + p.ff(p.norm_ff(q1));
}

Tensor sinusoidal_features(const Tensor &points, std::size_t frequencies) {
    if (points.rank() != 2) {
        throw ShapeError("sinusoidal_features: expected [N, D] points, got " +
                         shape_string(points.shape()));
    }
    const std::size_t n = points.dim(0), dims = points.dim(1), k = frequencies;
    const std::size_t width = 2 * dims * k;
    auto pv = points.values();
    std::vector<double> out(n * width);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < dims; ++c) {
            for (std::size_t f = 0; f < k; ++f) {
                const double w = std::ldexp(std::numbers::pi, static_cast<int>(f));
                const double arg = w * pv[i * dims + c];
                out[i * width + (c * k + f) * 2] = std::sin(arg);
                out[i * width + (c * k + f) * 2 + 1] = std::cos(arg);
            }
        }
    }
    auto in = points.node();
    return detail::make_result(
        "sinusoidal_features", Shape{n, width}, std::move(out), {&points},
        [in, n, dims, k, width](detail::Node &o) {
            auto &g = in->ensure_grad();
            for (std::size_t i = 0; i < n; ++i) {
                for (std::size_t c = 0; c < dims; ++c) {
                    double acc = 0.0;
                    for (std::size_t f = 0; f < k; ++f) {
                        const double w = std::ldexp(std::numbers::pi, static_cast<int>(f));
                        const std::size_t col = i * width + (c * k + f) * 2;
                        // d sin = w cos, d cos = -w sin
                        acc += w * (o.grad[col] * o.value[col + 1] - o.grad[col + 1] * o.value[col]);
                    }
                    g[i * dims + c] += acc;
                }
            }
        });
}

FourierEncoder::FourierEncoder(ParamStore &store, const std::string &name, std::size_t input_dims_,
                               std::size_t frequencies_, std::size_t out, Rng &rng)
    : input_dims(input_dims_), frequencies(frequencies_),
      mlp(store, name, 2 * input_dims_ * frequencies_, out, out, rng) {}

} // namespace atlasgs
