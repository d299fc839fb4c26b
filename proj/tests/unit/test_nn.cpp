// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "atlasgs/gradcheck.hpp"
#include "atlasgs/nn.hpp"
#include "atlasgs/optim.hpp"
#include "atlasgs/parallel.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

using namespace atlasgs;
using namespace atlasgs::testing;

namespace {

struct Block {
    ParamStore store;
    AttentionParams p;
    Block(std::size_t dim, std::size_t heads, std::uint64_t seed) {
        Rng rng(seed);
        p = AttentionParams(store, "blk", dim, heads, 2, rng);
        randomize(store, rng);
    }
};

Tensor permute_rows(const Tensor &x, const std::vector<std::size_t> &perm) {
    return gather_rows(x, perm);
}

} // namespace

TEST(Linear, InitBoundsAndZeroBias) {
    Rng rng(1);
    ParamStore store;
    Linear l(store, "l", 16, 8, rng);
    for (double w : l.weight.values()) EXPECT_LE(std::abs(w), 0.25);
    for (double b : l.bias.values()) EXPECT_EQ(b, 0.0);
    EXPECT_EQ(store.count(), 16u * 8u + 8u);
    Linear nb(store, "nb", 4, 4, rng, false);
    EXPECT_FALSE(nb.bias.defined());
}

TEST(Attention, SelfAttentionMatchesDirectFormula) {
    Block b(8, 2, 2);
    Rng rng(3);
    Tensor x = random_tensor({3, 8}, rng);
    Tensor y = self_attention(x, b.p);
    Matrix ref = naive_block(to_matrix(x), {}, b.p, false);
    EXPECT_LE(max_abs_diff(ref, y), 1e-12);
}

TEST(Attention, SingleTokenIsResidualPlusFfn) {
    Block b(8, 2, 4);
    Rng rng(5);
    Tensor x = random_tensor({1, 8}, rng);
    // one token: the attention mix is exactly its own value row
    Matrix xm = to_matrix(x);
    Matrix v = naive_linear(naive_layer_norm(xm, b.p.norm_q), b.p.wv);
    Matrix x1 = naive_add(xm, naive_linear(v, b.p.wo));
    Matrix ff = naive_linear(
        naive_gelu(naive_linear(naive_layer_norm(x1, b.p.norm_ff), b.p.ff.fc1)), b.p.ff.fc2);
    EXPECT_LE(max_abs_diff(naive_add(x1, ff), self_attention(x, b.p)), 1e-12);
}

TEST(Attention, SelfAttentionIsPermutationEquivariant) {
    Block b(8, 4, 6);
    Rng rng(7);
    Tensor x = random_tensor({6, 8}, rng);
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    Tensor a = permute_rows(self_attention(x, b.p), perm);
    Tensor c = self_attention(permute_rows(x, perm), b.p);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], c[i], 1e-6);
}

TEST(Attention, CrossAttentionMatchesDirectFormula) {
    Block b(8, 2, 8);
    Rng rng(9);
    Tensor q = random_tensor({2, 8}, rng);
    Tensor kv = random_tensor({5, 8}, rng);
    Matrix ref = naive_block(to_matrix(q), to_matrix(kv), b.p, true);
    EXPECT_LE(max_abs_diff(ref, cross_attention(q, kv, b.p)), 1e-12);
}

TEST(Attention, CrossAttentionInvariantToKeyOrder) {
    Block b(8, 2, 10);
    Rng rng(11);
    Tensor q = random_tensor({3, 8}, rng);
    Tensor kv = random_tensor({5, 8}, rng);
    Tensor a = cross_attention(q, kv, b.p);
    Tensor c = cross_attention(q, permute_rows(kv, {4, 2, 0, 3, 1}), b.p);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], c[i], 1e-6);
    Tensor qa = permute_rows(a, {2, 0, 1});
    Tensor qc = cross_attention(permute_rows(q, {2, 0, 1}), kv, b.p);
    for (std::size_t i = 0; i < qa.numel(); ++i) EXPECT_NEAR(qa[i], qc[i], 1e-6);
}

TEST(Attention, SingleKeyIgnoresLogits) {
    Block b(8, 2, 12);
    Rng rng(13);
    Tensor q1 = random_tensor({2, 8}, rng);
    Tensor kv = random_tensor({1, 8}, rng);
    Tensor a = cross_attention(q1, kv, b.p);
    // changing the key projection changes only logits; a single key has weight 1
    for (double &w : b.p.wk.weight.mutable_values()) w *= -3.0;
    Tensor c = cross_attention(q1, kv, b.p);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], c[i], 1e-12);
}

TEST(Attention, GroupedSelfAttentionEqualsPerGroup) {
    Block b(8, 2, 14);
    Rng rng(15);
    Tensor x = random_tensor({12, 8}, rng);
    Tensor grouped = self_attention(x, b.p, 3);
    for (std::size_t g = 0; g < 3; ++g) {
        Tensor part = self_attention(slice_rows(x, g * 4, (g + 1) * 4), b.p);
        for (std::size_t i = 0; i < part.numel(); ++i) EXPECT_NEAR(grouped[g * 32 + i], part[i], 1e-12);
    }
}

TEST(Attention, BlockGradients) {
    PrecisionGuard guard(Precision::f64);
    Block b(8, 2, 16);
    Rng rng(17);
    Tensor q = random_param({3, 8}, rng);
    Tensor kv = random_param({4, 8}, rng);
    auto f = [&] { return sum(square(cross_attention(self_attention(q, b.p), kv, b.p))); };
    std::vector<Tensor> params{q, kv};
    for (auto &[name, t] : b.store.entries()) params.push_back(t);
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 6;
    EXPECT_LE(check_gradient(f, params, opt).max_rel_error, 1e-4);
}

TEST(Sinusoid, ZeroPointEncoding) {
    Tensor p({1, 2}, 0.0);
    Tensor s = sinusoidal_features(p, 4);
    ASSERT_EQ(s.numel(), 16u);
    for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(s[i], i % 2 == 0 ? 0.0 : 1.0);
}

TEST(Sinusoid, FrequencyLadder) {
    Tensor p({1, 1}, std::vector<double>{0.3});
    Tensor s = sinusoidal_features(p, 3);
    for (std::size_t k = 0; k < 3; ++k) {
        const double w = std::pow(2.0, static_cast<double>(k)) * std::numbers::pi;
        EXPECT_NEAR(s[2 * k], std::sin(w * 0.3), 1e-15);
        EXPECT_NEAR(s[2 * k + 1], std::cos(w * 0.3), 1e-15);
    }
}

TEST(OneCycle, WarmupPeakAndDecay) {
    OneCycle sched{1e-2, 100, 0.25, 25.0, 1e4};
    EXPECT_NEAR(sched.lr(0), 1e-2 / 25.0, 1e-12);
    EXPECT_NEAR(sched.lr(25), 1e-2, 1e-9);
    EXPECT_LT(sched.lr(99), 1e-5);
    for (std::size_t s = 26; s < 100; ++s) EXPECT_LE(sched.lr(s), sched.lr(s - 1));
}

TEST(AdamW, FirstStepMovesBySignedLr) {
    ParamStore store;
    Tensor &w = store.add("w", {2}, {1.0, -1.0});
    AdamWOptions opt;
    opt.weight_decay = 0.0;
    opt.clip_norm = 0.0;
    AdamW adam(store, opt);
    sum(square(w)).backward();
    adam.step(0.1);
    EXPECT_NEAR(w[0], 0.9, 1e-6);
    EXPECT_NEAR(w[1], -0.9, 1e-6);
    EXPECT_EQ(adam.steps(), 1u);
}

TEST(AdamW, DecayOnlyOnMatrices) {
    ParamStore store;
    Tensor m = store.add("m", {1, 1}, {1.0});
    Tensor v = store.add("v", {1}, {1.0});
    AdamWOptions opt;
    opt.weight_decay = 0.5;
    AdamW adam(store, opt);
    m.mutable_grad();
    v.mutable_grad();
    adam.step(0.1);
    EXPECT_NEAR(m[0], 0.95, 1e-12);
    EXPECT_EQ(v[0], 1.0);
}

TEST(Parallel, ChunksCoverRangeAndResultsMatchSerial) {
    std::vector<double> a(1000), b(1000);
    auto fill = [](std::vector<double> &out) {
        parallel_for(out.size(), [&](std::size_t, std::size_t begin, std::size_t end) {
            for (std::size_t i = begin; i < end; ++i) out[i] = std::sin(static_cast<double>(i));
        });
    };
    set_thread_count(1);
    fill(a);
    set_thread_count(3);
    fill(b);
    set_thread_count(1);
    EXPECT_EQ(a, b);
}
