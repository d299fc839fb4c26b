// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Naive reference evaluations used as oracles by the unit tests.

#pragma once

#include "atlasgs/nn.hpp"
#include "atlasgs/rng.hpp"
#include "atlasgs/tensor.hpp"

#include <cmath>
#include <vector>

namespace atlasgs::testing {

using Matrix = std::vector<std::vector<double>>;

inline Tensor random_tensor(Shape shape, Rng &rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (double &x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

inline Tensor random_param(Shape shape, Rng &rng, double scale = 1.0) {
    Tensor t = random_tensor(std::move(shape), rng, scale);
    t.set_requires_grad(true);
    return t;
}

inline Matrix to_matrix(const Tensor &t) {
    const std::size_t r = t.dim(0), c = t.dim(1);
    Matrix m(r, std::vector<double>(c));
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) m[i][j] = t.at(i, j);
    return m;
}

inline Matrix naive_matmul(const Matrix &a, const Matrix &b) {
    Matrix out(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < b[0].size(); ++j)
            for (std::size_t k = 0; k < b.size(); ++k) out[i][j] += a[i][k] * b[k][j];
    return out;
}

inline Matrix naive_linear(const Matrix &x, const Linear &l) {
    Matrix out = naive_matmul(x, to_matrix(l.weight));
    if (l.bias.defined()) {
        for (auto &row : out)
            for (std::size_t j = 0; j < row.size(); ++j) row[j] += l.bias[j];
    }
    return out;
}

inline Matrix naive_layer_norm(const Matrix &x, const LayerNorm &ln, double eps = 1e-5) {
    Matrix out = x;
    for (auto &row : out) {
        double mu = 0.0, var = 0.0;
        for (double v : row) mu += v;
        mu /= static_cast<double>(row.size());
        for (double v : row) var += (v - mu) * (v - mu);
        var /= static_cast<double>(row.size());
        for (std::size_t j = 0; j < row.size(); ++j)
            row[j] = (row[j] - mu) / std::sqrt(var + eps) * ln.gamma[j] + ln.beta[j];
    }
    return out;
}

inline Matrix naive_gelu(Matrix x) {
    for (auto &row : x)
        for (double &v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return x;
}

inline Matrix naive_add(Matrix a, const Matrix &b) {
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
    return a;
}

/// softmax(Q K^T / sqrt(dh)) V per head.
inline Matrix naive_mha(const Matrix &q, const Matrix &k, const Matrix &v, std::size_t heads) {
    const std::size_t d = q[0].size(), dh = d / heads;
    Matrix out(q.size(), std::vector<double>(d, 0.0));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < q.size(); ++i) {
            std::vector<double> logits(k.size());
            double mx = -1e300;
            for (std::size_t j = 0; j < k.size(); ++j) {
                double dot = 0.0;
                for (std::size_t c = 0; c < dh; ++c) dot += q[i][h * dh + c] * k[j][h * dh + c];
                logits[j] = dot / std::sqrt(static_cast<double>(dh));
                mx = std::max(mx, logits[j]);
            }
            double z = 0.0;
            for (double &l : logits) z += (l = std::exp(l - mx));
            for (std::size_t j = 0; j < k.size(); ++j)
                for (std::size_t c = 0; c < dh; ++c)
                    out[i][h * dh + c] += logits[j] / z * v[j][h * dh + c];
        }
    }
    return out;
}

/// Pre-norm block: x + Wo Attn(LN(x), LN(kv)); then + FFN(LN(.)).
inline Matrix naive_block(const Matrix &x, const Matrix &kv, const AttentionParams &p,
                          bool cross) {
    const Matrix hq = naive_layer_norm(x, p.norm_q);
    const Matrix hkv = cross ? naive_layer_norm(kv, p.norm_kv) : hq;
    const Matrix a = naive_mha(naive_linear(hq, p.wq), naive_linear(hkv, p.wk),
                               naive_linear(hkv, p.wv), p.heads);
    const Matrix x1 = naive_add(x, naive_linear(a, p.wo));
    const Matrix ff =
        naive_linear(naive_gelu(naive_linear(naive_layer_norm(x1, p.norm_ff), p.ff.fc1)), p.ff.fc2);
    return naive_add(x1, ff);
}

/// Randomizes every parameter of a store (layer-norm scales included).
inline void randomize(ParamStore &store, Rng &rng, double scale = 0.5) {
    for (auto &[name, t] : store.entries()) {
        for (double &v : t.mutable_values()) v = scale * rng.normal();
    }
}

inline double max_abs_diff(const Matrix &a, const Tensor &b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b.at(i, j)));
    return m;
}

} // namespace atlasgs::testing
