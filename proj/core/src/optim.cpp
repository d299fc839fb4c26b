// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace atlasgs {

AdamW::AdamW(ParamStore &store, AdamWOptions options) : store_(&store), options_(options) {
    for (const auto &[name, p] : store.entries()) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

double gradient_norm(const ParamStore &store) {
    double s = 0.0;
    for (const auto &[name, p] : store.entries()) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) s += g * g;
    }
    return std::sqrt(s);
}

double AdamW::step(double lr) {
    if (store_ == nullptr) {
        throw std::logic_error("AdamW: no parameter store");
    }
    auto &entries = store_->entries();
    if (entries.size() != m_.size()) {
        throw std::logic_error("AdamW: parameter store changed after construction");
    }
    const double norm = gradient_norm(*store_);
    if (!std::isfinite(norm)) {
        throw NonFiniteError("AdamW: non-finite gradient norm");
    }
    const double clip =
        (options_.clip_norm > 0.0 && norm > options_.clip_norm) ? options_.clip_norm / norm : 1.0;
    ++t_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    const bool f32 = precision() == Precision::f32;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        Tensor &p = entries[k].second;
        if (!p.has_grad()) continue;
        auto g = p.grad();
        auto w = p.mutable_values();
        auto &m = m_[k];
        auto &v = v_[k];
        const double decay = p.rank() >= 2 ? options_.weight_decay : 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = g[i] * clip;
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + options_.eps);
            double next = w[i] - lr * (update + decay * w[i]);
            if (f32) next = static_cast<double>(static_cast<float>(next));
            w[i] = next;
        }
    }
    return norm;
}

NamedTensors AdamW::state(const std::string &prefix) const {
    NamedTensors out;
    const auto &entries = store_->entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const Shape &s = entries[k].second.shape();
        out.emplace_back(prefix + "m/" + entries[k].first, Tensor(s, m_[k]));
        out.emplace_back(prefix + "v/" + entries[k].first, Tensor(s, v_[k]));
    }
    out.emplace_back(prefix + "step", Tensor::scalar(static_cast<double>(t_)));
    return out;
}

void AdamW::load_state(const NamedTensors &tensors, const std::string &prefix) {
    const auto &entries = store_->entries();
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const std::string &name = entries[k].first;
        const Tensor &m = find_tensor(tensors, prefix + "m/" + name);
        const Tensor &v = find_tensor(tensors, prefix + "v/" + name);
        if (m.numel() != m_[k].size() || v.numel() != v_[k].size()) {
            throw CheckpointError("optimizer state for '" + name + "' has the wrong size");
        }
        m_[k].assign(m.values().begin(), m.values().end());
        v_[k].assign(v.values().begin(), v.values().end());
    }
    t_ = static_cast<std::size_t>(find_tensor(tensors, prefix + "step").item());
}

double OneCycle::lr(std::size_t step) const {
    const double initial = max_lr / div_factor;
    const double final_lr = initial / final_div_factor;
    const double total = static_cast<double>(std::max<std::size_t>(1, total_steps));
    const double warm = std::max(1.0, std::floor(pct_start * total));
    const double s = static_cast<double>(step);
    auto cosine = [](double from, double to, double frac) {
        return to + (from - to) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
    };
    if (s < warm) {
        return cosine(initial, max_lr, s / warm);
    }
    const double rest = std::max(1.0, total - warm);
    return cosine(max_lr, final_lr, std::min(1.0, (s - warm) / rest));
}

} // namespace atlasgs
