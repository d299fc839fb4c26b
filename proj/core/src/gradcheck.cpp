// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/gradcheck.hpp"

#include "atlasgs/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace atlasgs {

namespace {

double evaluate(const std::function<Tensor()> &f) {
    NoGradGuard no_grad;
    const double v = f().item();
    if (!std::isfinite(v)) {
        throw NonFiniteError("check_gradient: non-finite function value at probe point");
    }
    return v;
}

} // namespace

GradCheckResult check_gradient(const std::function<Tensor()> &f, std::vector<Tensor> params,
                               const GradCheckOptions &options) {
    for (auto &p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    const Tensor loss = f();
    loss.backward();

    GradCheckResult result;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor &p = params[t];
        std::vector<double> analytic(p.numel(), 0.0);
        if (p.has_grad()) {
            std::copy(p.grad().begin(), p.grad().end(), analytic.begin());
        }
        std::vector<std::size_t> coords(p.numel());
        std::iota(coords.begin(), coords.end(), std::size_t{0});
        if (options.max_coords_per_tensor > 0 && coords.size() > options.max_coords_per_tensor) {
            std::shuffle(coords.begin(), coords.end(), rng.engine());
            coords.resize(options.max_coords_per_tensor);
        }
        auto values = p.mutable_values();
        for (std::size_t i : coords) {
            const double orig = values[i];
            values[i] = orig + options.eps;
            const double fp = evaluate(f);
            values[i] = orig - options.eps;
            const double fm = evaluate(f);
            values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * options.eps);
            const double a = options.inject_sign_error ? -analytic[i] : analytic[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            const double rel = std::abs(a - numeric) / denom;
            ++result.coords_checked;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst_tensor = t;
                result.worst_index = i;
                result.worst_analytic = a;
                result.worst_numeric = numeric;
            }
        }
    }
    return result;
}

} // namespace atlasgs
