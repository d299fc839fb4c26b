// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "atlasgs/atlas.hpp"
#include "atlasgs/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace atlasgs;
using namespace atlasgs::testing;

namespace {

struct Fixture {
    ParamStore store;
    AtlasDecoder decoder;
    Fixture(std::size_t dim, std::uint64_t seed, AtlasDecoderConfig cfg = {}) {
        cfg.dim = dim;
        cfg.hidden = 16;
        cfg.frequencies = 4;
        Rng rng(seed);
        decoder = AtlasDecoder(store, "atlas", cfg, rng);
        randomize(store, rng, 0.4);
    }
    void zero(const std::string &prefix) {
        for (auto &[name, t] : store.entries())
            if (name.rfind(prefix, 0) == 0)
                for (double &v : t.mutable_values()) v = 0.0;
    }
};

std::vector<double> mlp_eval(const Mlp &mlp, const std::vector<double> &x) {
    Matrix h = naive_gelu(naive_linear({x}, mlp.fc1));
    return naive_linear(h, mlp.fc2)[0];
}

std::vector<double> encode_ref(UV q, const FourierEncoder &enc) {
    return mlp_eval(enc.mlp, uv_sinusoid(q, enc.frequencies));
}

std::array<double, 4> weights_ref(UV q, const std::vector<double> &f, const FourierEncoder &enc) {
    const std::size_t d = f.size() / 4;
    const auto eq = encode_ref(q, enc);
    std::array<double, 4> logits{};
    for (std::size_t k = 0; k < 4; ++k) {
        const auto eu = encode_ref({kCornerUV[k][0], kCornerUV[k][1]}, enc);
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += eq[c] * (f[k * d + c] + eu[c]);
        logits[k] = dot / std::sqrt(static_cast<double>(d));
    }
    double mx = std::max({logits[0], logits[1], logits[2], logits[3]}), z = 0.0;
    for (double &l : logits) z += (l = std::exp(l - mx));
    for (double &l : logits) l /= z;
    return logits;
}

std::vector<double> blend_ref(UV q, const std::vector<double> &f, const FourierEncoder &enc) {
    const std::size_t d = f.size() / 4;
    const auto w = weights_ref(q, f, enc);
    std::vector<double> out(d, 0.0);
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t c = 0; c < d; ++c) out[c] += w[k] * f[k * d + c];
    return out;
}

Patch random_patch(std::size_t d, Rng &rng) {
    Patch p;
    for (double &c : p.center) c = rng.uniform(-1, 1);
    p.geom.resize(4 * d);
    p.app.resize(4 * d);
    for (double &v : p.geom) v = rng.normal();
    for (double &v : p.app) v = rng.normal();
    return p;
}

double sigmoid_ref(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

TEST(Atlas, ZeroMlpEncodingIsZero) {
    Fixture fx(8, 1);
    fx.zero("atlas.uv_geom");
    for (double v : positional_encode_2d({0.3, 0.7}, fx.decoder.uv_encoder(Branch::geometry)))
        EXPECT_EQ(v, 0.0);
}

TEST(Atlas, RawEncodingAtOrigin) {
    auto raw = uv_sinusoid({0.0, 0.0}, 4);
    ASSERT_EQ(raw.size(), 16u);
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_EQ(raw[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Atlas, UniformWeightsForZeroFeaturesAndZeroMlp) {
    Fixture fx(8, 2);
    fx.zero("atlas.uv_geom");
    auto w = corner_weights({0.2, 0.9}, std::vector<double>(32, 0.0), fx.decoder, Branch::geometry);
    for (double v : w) EXPECT_EQ(v, 0.25);
}

TEST(Atlas, CornerWeightsMatchDirectFormula) {
    Fixture fx(8, 3);
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        UV q{rng.uniform(), rng.uniform()};
        std::vector<double> f(32);
        for (double &v : f) v = rng.normal();
        for (Branch b : {Branch::geometry, Branch::appearance}) {
            auto w = corner_weights(q, f, fx.decoder, b);
            auto ref = weights_ref(q, f, fx.decoder.uv_encoder(b));
            double sum = 0.0;
            for (int k = 0; k < 4; ++k) {
                EXPECT_GT(w[k], 0.0);
                EXPECT_NEAR(w[k], ref[k], 1e-12);
                sum += w[k];
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Atlas, SoftmaxShiftInvariance) {
    // adding t to every corner feature along enc(q) shifts all logits by the same amount
    Fixture fx(8, 5);
    Rng rng(6);
    UV q{0.4, 0.6};
    std::vector<double> f(32);
    for (double &v : f) v = rng.normal();
    auto eq = encode_ref(q, fx.decoder.uv_encoder(Branch::geometry));
    double nrm = 0.0;
    for (double v : eq) nrm += v * v;
    std::vector<double> g = f;
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t c = 0; c < 8; ++c) g[k * 8 + c] += 1.7 * eq[c] / nrm;
    auto a = corner_weights(q, f, fx.decoder, Branch::geometry);
    auto b = corner_weights(q, g, fx.decoder, Branch::geometry);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(a[k], b[k], 1e-12);
}

TEST(Atlas, BilinearModeWeights) {
    AtlasDecoderConfig cfg;
    cfg.weight_mode = CornerWeightMode::bilinear;
    Fixture fx(8, 7, cfg);
    auto w = corner_weights({0.25, 0.5}, std::vector<double>(32, 1.0), fx.decoder, Branch::geometry);
    EXPECT_NEAR(w[0], 0.75 * 0.5, 1e-15);
    EXPECT_NEAR(w[1], 0.25 * 0.5, 1e-15);
    EXPECT_NEAR(w[2], 0.25 * 0.5, 1e-15);
    EXPECT_NEAR(w[3], 0.75 * 0.5, 1e-15);
}

TEST(Atlas, ZeroPositionHeadGivesCenter) {
    Fixture fx(8, 8);
    fx.zero("atlas.position_head");
    Rng rng(9);
    Patch p = random_patch(8, rng);
    for (UV q : sample_uv_random(10, rng)) {
        Vec3 mu = decode_position(q, p, fx.decoder);
        for (int i = 0; i < 3; ++i) EXPECT_EQ(mu[i], p.center[i]);
    }
}

TEST(Atlas, CenterAdditivity) {
    Fixture fx(8, 10);
    Rng rng(11);
    Patch a = random_patch(8, rng);
    Patch b = a;
    const Vec3 shift{0.25, -0.5, 0.125};
    for (int i = 0; i < 3; ++i) b.center[i] += shift[i];
    for (UV q : sample_uv_random(10, rng)) {
        Vec3 ma = decode_position(q, a, fx.decoder), mb = decode_position(q, b, fx.decoder);
        for (int i = 0; i < 3; ++i) EXPECT_NEAR(mb[i] - ma[i], shift[i], 1e-15);
    }
}

TEST(Atlas, DecodePositionMatchesComposition) {
    Fixture fx(8, 12);
    Rng rng(13);
    Patch p = random_patch(8, rng);
    UV q{0.3, 0.8};
    auto blended = blend_ref(q, p.geom, fx.decoder.uv_encoder(Branch::geometry));
    auto res = mlp_eval(fx.decoder.position_head(), blended);
    Vec3 mu = decode_position(q, p, fx.decoder);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(mu[i], res[i] + p.center[i], 1e-12);
}

TEST(Atlas, ZeroAttributeHeadActivations) {
    Fixture fx(8, 14);
    fx.zero("atlas.attribute_head");
    Rng rng(15);
    Gaussian3D g = decode_attributes({0.5, 0.5}, random_patch(8, rng), fx.decoder);
    for (double s : g.scale) EXPECT_EQ(s, 1.0);
    EXPECT_EQ(g.rotation, (std::array<double, 4>{1, 0, 0, 0}));
    EXPECT_EQ(g.opacity, 0.5);
    for (double c : g.color) EXPECT_EQ(c, 0.5);
}

TEST(Atlas, DecodeAttributesMatchesComposition) {
    Fixture fx(8, 16);
    Rng rng(17);
    Patch p = random_patch(8, rng);
    UV q{0.6, 0.1};
    auto a = mlp_eval(fx.decoder.attribute_head(), blend_ref(q, p.app, fx.decoder.uv_encoder(Branch::appearance)));
    Gaussian3D g = decode_attributes(q, p, fx.decoder);
    for (int i = 0; i < 3; ++i)
        EXPECT_NEAR(g.scale[i], std::clamp(std::exp(a[i]), kMinScale, kMaxScale), 1e-12);
    std::array<double, 4> r{a[3] + 1.0, a[4], a[5], a[6]};
    double n = std::sqrt(r[0] * r[0] + r[1] * r[1] + r[2] * r[2] + r[3] * r[3]);
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(g.rotation[i], r[i] / n, 1e-12);
    EXPECT_NEAR(g.opacity, sigmoid_ref(a[7]), 1e-12);
    for (int i = 0; i < 3; ++i) EXPECT_NEAR(g.color[i], sigmoid_ref(a[8 + i]), 1e-12);
    EXPECT_TRUE(satisfies_invariants(g));
}

TEST(Atlas, GridSamples) {
    auto g1 = sample_uv_grid(1);
    ASSERT_EQ(g1.size(), 1u);
    EXPECT_EQ(g1[0].u, 0.5);
    EXPECT_EQ(g1[0].v, 0.5);
    auto g2 = sample_uv_grid(2);
    const double e[4][2] = {{0.25, 0.25}, {0.25, 0.75}, {0.75, 0.25}, {0.75, 0.75}};
    ASSERT_EQ(g2.size(), 4u);
    for (int i = 0; i < 4; ++i) {
        EXPECT_EQ(g2[i].u, e[i][0]);
        EXPECT_EQ(g2[i].v, e[i][1]);
    }
    EXPECT_THROW(sample_uv_grid(0), std::invalid_argument);
}

TEST(Atlas, RandomSamples) {
    Rng a(5), b(5);
    auto sa = sample_uv_random(100, a), sb = sample_uv_random(100, b);
    for (std::size_t i = 0; i < 100; ++i) {
        EXPECT_EQ(sa[i].u, sb[i].u);
        EXPECT_EQ(sa[i].v, sb[i].v);
    }
    Rng c(6);
    auto big = sample_uv_random(10000, c);
    double mu = 0.0, mv = 0.0;
    for (auto p : big) {
        ASSERT_GE(p.u, 0.0);
        ASSERT_LE(p.u, 1.0);
        mu += p.u;
        mv += p.v;
    }
    EXPECT_NEAR(mu / 1e4, 0.5, 0.02);
    EXPECT_NEAR(mv / 1e4, 0.5, 0.02);
    auto one = sample_uv_random(1, c);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_TRUE(one[0].u >= 0 && one[0].u <= 1 && one[0].v >= 0 && one[0].v <= 1);
}

TEST(Atlas, DecodeCountOrderAndParameterInvariance) {
    Fixture fx(8, 18);
    Rng rng(19);
    std::vector<Patch> patches{random_patch(8, rng), random_patch(8, rng)};
    const std::size_t before = fx.store.count();
    auto uv3 = sample_uv_random(3, rng);
    auto gs = decode_atlas(patches, fx.decoder, uv3);
    ASSERT_EQ(gs.size(), 6u);
    for (std::size_t m = 0; m < 2; ++m) {
        for (std::size_t s = 0; s < 3; ++s) {
            Vec3 mu = decode_position(uv3[s], patches[m], fx.decoder);
            for (int i = 0; i < 3; ++i) EXPECT_NEAR(gs[m * 3 + s].mean[i], mu[i], 1e-12);
        }
    }
    EXPECT_EQ(decode_atlas(patches, fx.decoder, sample_uv_grid(2)).size(), 8u);
    EXPECT_EQ(decode_atlas(patches, fx.decoder, sample_uv_grid(7)).size(), 98u);
    EXPECT_EQ(fx.store.count(), before);
    EXPECT_THROW(decode_atlas(patches, fx.decoder, {}), std::invalid_argument);
}

TEST(Atlas, GridDecodeEqualsPointwise) {
    Fixture fx(8, 20);
    Rng rng(21);
    std::vector<Patch> patches{random_patch(8, rng)};
    auto grid = sample_uv_grid(2);
    auto all = decode_atlas(patches, fx.decoder, grid);
    for (std::size_t i = 0; i < 4; ++i) {
        auto one = decode_atlas(patches, fx.decoder, {grid[i]});
        for (int c = 0; c < 3; ++c) {
            EXPECT_NEAR(all[i].mean[c], one[0].mean[c], 1e-12);
            EXPECT_NEAR(all[i].color[c], one[0].color[c], 1e-12);
        }
        EXPECT_NEAR(all[i].opacity, one[0].opacity, 1e-12);
    }
}

TEST(Atlas, DecodedGaussiansSatisfyInvariants) {
    Fixture fx(8, 22);
    Rng rng(23);
    std::vector<Patch> patches;
    for (int i = 0; i < 5; ++i) patches.push_back(random_patch(8, rng));
    for (const auto &g : decode_atlas(patches, fx.decoder, sample_uv_random(7, rng)))
        EXPECT_TRUE(satisfies_invariants(g));
}

TEST(Atlas, DecodeGradients) {
    PrecisionGuard guard(Precision::f64);
    Fixture fx(8, 24);
    Rng rng(25);
    Tensor uv = random_param({6, 2}, rng, 0.2);
    for (double &v : uv.mutable_values()) v = 0.5 + v;
    Tensor centers = random_param({2, 3}, rng);
    Tensor geom = random_param({8, 8}, rng);
    Tensor app = random_param({8, 8}, rng);
    auto f = [&] {
        GaussianTensors g = fx.decoder.decode(uv, centers, geom, app);
        return sum(square(g.means)) + mean(g.scales) + sum(g.rotations * g.rotations * g.rotations) +
               sum(g.opacities) + mean(square(g.colors));
    };
    std::vector<Tensor> params{uv, centers, geom, app};
    for (auto &[name, t] : fx.store.entries()) params.push_back(t);
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 6;
    EXPECT_LE(check_gradient(f, params, opt).max_rel_error, 1e-4);
}
