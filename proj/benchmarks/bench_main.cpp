// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the hot paths: rasterizer, attention, point losses,
// atlas decoding and the latent sampler.

#include "atlasgs/atlas.hpp"
#include "atlasgs/datagen.hpp"
#include "atlasgs/diffusion.hpp"
#include "atlasgs/geometry.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/vae.hpp"

#include <benchmark/benchmark.h>

#include <cmath>

using namespace atlasgs;

namespace {

std::vector<Vec3> random_points(std::size_t n, Rng &rng) {
    std::vector<Vec3> p(n);
    for (auto &x : p)
        for (double &c : x) c = rng.uniform(-1.0, 1.0);
    return p;
}

std::vector<Gaussian3D> random_gaussians(std::size_t n, Rng &rng) {
    std::vector<Gaussian3D> g(n);
    for (auto &x : g) {
        for (double &c : x.mean) c = rng.uniform(-0.6, 0.6);
        for (double &s : x.scale) s = rng.uniform(0.01, 0.05);
        x.rotation = {1.0, rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)};
        double norm = 0.0;
        for (double q : x.rotation) norm += q * q;
        for (double &q : x.rotation) q /= std::sqrt(norm);
        x.opacity = rng.uniform(0.3, 0.95);
        for (double &c : x.color) c = rng.uniform();
    }
    return g;
}

Tensor random_tensor(Shape shape, Rng &rng) {
    Tensor t(shape, 0.0);
    for (double &v : t.mutable_values()) v = rng.normal();
    return t;
}

} // namespace

static void BM_Rasterize(benchmark::State &state) {
    Rng rng(1);
    const auto g = random_gaussians(static_cast<std::size_t>(state.range(0)), rng);
    RigOptions rig;
    rig.width = rig.height = 64;
    const Camera cam = default_camera_rig(rig)[0];
    for (auto _ : state) benchmark::DoNotOptimize(rasterize(g, cam, kDefaultBackground));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rasterize)->Arg(1024)->Arg(4096)->Arg(16384)->Unit(benchmark::kMillisecond);

static void BM_RasterizeBackward(benchmark::State &state) {
    Rng rng(2);
    const auto g = GaussianTensors::from_gaussians(random_gaussians(static_cast<std::size_t>(state.range(0)), rng));
    for (Tensor t : {g.means, g.scales, g.rotations, g.opacities, g.colors}) t.set_requires_grad(true);
    RigOptions rig;
    rig.width = rig.height = 64;
    const Camera cam = default_camera_rig(rig)[0];
    for (auto _ : state) {
        RenderTensors r = rasterize(g, cam, kDefaultBackground);
        Tensor loss = sum(r.rgb) + sum(r.alpha);
        loss.backward();
    }
}
BENCHMARK(BM_RasterizeBackward)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

static void BM_AttentionLocalVsFull(benchmark::State &state) {
    const std::size_t patches = static_cast<std::size_t>(state.range(0));
    const bool local = state.range(1) != 0;
    Rng rng(3);
    const Tensor x = random_tensor({patches * 4, 32}, rng);
    NoGradGuard no_grad;
    for (auto _ : state) benchmark::DoNotOptimize(attention(x, x, x, 4, local ? patches : 1));
}
BENCHMARK(BM_AttentionLocalVsFull)
    ->Args({64, 1})
    ->Args({64, 0})
    ->Args({256, 1})
    ->Args({256, 0})
    ->Unit(benchmark::kMicrosecond);

static void BM_Chamfer(benchmark::State &state) {
    Rng rng(4);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto p = random_points(n, rng), q = random_points(n, rng);
    for (auto _ : state) benchmark::DoNotOptimize(chamfer(p, q));
}
BENCHMARK(BM_Chamfer)->Arg(256)->Arg(1024)->Arg(4096)->Unit(benchmark::kMillisecond);

static void BM_EmdExact(benchmark::State &state) {
    Rng rng(5);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto p = random_points(n, rng), q = random_points(n, rng);
    for (auto _ : state) benchmark::DoNotOptimize(emd_exact(p, q));
}
BENCHMARK(BM_EmdExact)->Arg(64)->Arg(256)->Unit(benchmark::kMillisecond);

static void BM_EmdApprox(benchmark::State &state) {
    Rng rng(6);
    const std::size_t n = static_cast<std::size_t>(state.range(0));
    const auto p = random_points(n, rng), q = random_points(n, rng);
    for (auto _ : state) benchmark::DoNotOptimize(emd_approx(p, q));
}
BENCHMARK(BM_EmdApprox)->Arg(64)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

static void BM_DecodeGrid(benchmark::State &state) {
    VAEConfig c;
    const AtlasVAE model(c, 7);
    Rng rng(8);
    const Tensor z0 = random_tensor({c.latent_tokens, c.latent_dim}, rng);
    NoGradGuard no_grad;
    const DecoderOutput out = model.decode(z0);
    const std::size_t alpha = static_cast<std::size_t>(state.range(0));
    for (auto _ : state) benchmark::DoNotOptimize(model.decode_grid(out, alpha));
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(c.patches * alpha * alpha));
}
BENCHMARK(BM_DecodeGrid)->Arg(2)->Arg(4)->Arg(7)->Unit(benchmark::kMillisecond);

static void BM_SampleLatent(benchmark::State &state) {
    EDMConfig c;
    const Denoiser model(c, 9);
    std::uint64_t seed = 0;
    for (auto _ : state) {
        Rng rng(seed++);
        benchmark::DoNotOptimize(sample(model, 0, static_cast<std::size_t>(state.range(0)), rng));
    }
}
BENCHMARK(BM_SampleLatent)->Arg(40)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
