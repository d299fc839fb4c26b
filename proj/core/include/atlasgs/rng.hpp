// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace atlasgs {

/// Seeded pseudo-random source. Sequences depend only on the seed.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(engine_);
    }
    double normal() { return normal_(engine_); }
    std::size_t index(std::size_t n) {
        return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
    }
    std::uint64_t next_u64() { return engine_(); }
    std::mt19937_64 &engine() { return engine_; }

    /// Mixes a base seed with salts (epoch, shape index, ...) into an
    /// independent stream seed.
    static std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> salts) {
        std::uint64_t h = splitmix(seed);
        for (auto s : salts) {
            h = splitmix(h ^ (s + 0x9e3779b97f4a7c15ULL));
        }
        return h;
    }

private:
    static std::uint64_t splitmix(std::uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

} // namespace atlasgs
