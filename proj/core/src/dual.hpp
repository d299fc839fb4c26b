// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Forward-mode dual numbers with a fixed number of tangent directions. Used to
// differentiate small closed-form per-element maps (Gaussian projection).

#pragma once

#include <array>
#include <cmath>
#include <cstddef>

namespace atlasgs::detail {

template <std::size_t N>
struct Dual {
    double v = 0.0;
    std::array<double, N> d{};

    Dual() = default;
    Dual(double value) : v(value) {} // NOLINT(google-explicit-constructor)

    static Dual variable(double value, std::size_t index) {
        Dual x(value);
        x.d[index] = 1.0;
        return x;
    }
};

template <std::size_t N>
Dual<N> operator+(const Dual<N> &a, const Dual<N> &b) {
    Dual<N> r(a.v + b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}

template <std::size_t N>
Dual<N> operator-(const Dual<N> &a, const Dual<N> &b) {
    Dual<N> r(a.v - b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}

template <std::size_t N>
Dual<N> operator-(const Dual<N> &a) {
    Dual<N> r(-a.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = -a.d[i];
    return r;
}

template <std::size_t N>
Dual<N> operator*(const Dual<N> &a, const Dual<N> &b) {
    Dual<N> r(a.v * b.v);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
    return r;
}

template <std::size_t N>
Dual<N> operator/(const Dual<N> &a, const Dual<N> &b) {
    const double inv = 1.0 / b.v;
    Dual<N> r(a.v * inv);
    for (std::size_t i = 0; i < N; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
    return r;
}

template <std::size_t N>
Dual<N> sqrt(const Dual<N> &a) {
    Dual<N> r(std::sqrt(a.v));
    const double k = 0.5 / r.v;
    for (std::size_t i = 0; i < N; ++i) r.d[i] = a.d[i] * k;
    return r;
}

inline double value_of(double x) { return x; }
template <std::size_t N>
double value_of(const Dual<N> &x) {
    return x.v;
}

} // namespace atlasgs::detail
