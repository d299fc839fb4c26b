// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "atlasgs/diffusion.hpp"
#include "atlasgs/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

using namespace atlasgs;
using namespace atlasgs::testing;

namespace {

EDMConfig tiny_edm() {
    EDMConfig c;
    c.latent_tokens = 4;
    c.latent_dim = 3;
    c.dim = 16;
    c.heads = 2;
    c.blocks = 2;
    return c;
}

double norm(const Tensor &t) {
    double s = 0.0;
    for (double v : t.values()) s += v * v;
    return std::sqrt(s);
}

std::filesystem::path fresh_dir(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "atlasgs_unit" / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

} // namespace

TEST(Precondition, Formulas) {
    const double sd = 0.5;
    Preconditioning p = precondition(0.5, sd);
    EXPECT_NEAR(p.c_skip, 0.5, 1e-15);
    EXPECT_NEAR(p.c_in, std::sqrt(2.0), 1e-14);
    EXPECT_NEAR(p.c_out, sd / std::sqrt(2.0), 1e-15);
    EXPECT_NEAR(p.c_noise, 0.25 * std::log(0.5), 1e-15);
    Preconditioning tiny = precondition(1e-9, sd);
    EXPECT_NEAR(tiny.c_skip, 1.0, 1e-15);
    EXPECT_NEAR(tiny.c_out, 0.0, 1e-8);
    EXPECT_THROW(precondition(0.0, sd), std::invalid_argument);
    EXPECT_THROW(precondition(-1.0, sd), std::invalid_argument);
}

TEST(Precondition, Identities) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        const double sigma = std::exp(rng.uniform(std::log(1e-3), std::log(1e3)));
        const double sd = rng.uniform(0.1, 2.0);
        Preconditioning p = precondition(sigma, sd);
        const double id1 = p.c_out * p.c_out + p.c_skip * p.c_skip * (sigma * sigma + sd * sd);
        EXPECT_LE(std::abs(id1 - sd * sd) / (sd * sd), 1e-12);
        EXPECT_LE(std::abs(edm_weight(sigma, sd) * p.c_out * p.c_out - 1.0), 1e-12);
    }
}

TEST(Karras, ScheduleShape) {
    auto s = karras_sigmas(40, 0.002, 80.0, 7.0);
    ASSERT_EQ(s.size(), 41u);
    EXPECT_NEAR(s.front(), 80.0, 1e-12);
    EXPECT_NEAR(s[39], 0.002, 1e-15);
    EXPECT_EQ(s.back(), 0.0);
    for (std::size_t i = 1; i < s.size(); ++i) EXPECT_LT(s[i], s[i - 1]);
    auto one = karras_sigmas(1, 0.002, 80.0, 7.0);
    ASSERT_EQ(one.size(), 2u);
    EXPECT_EQ(one[0], 80.0);
}

TEST(Denoiser, ZeroOutputMapIsSkipPath) {
    EDMConfig c = tiny_edm();
    Denoiser model(c, 2);
    Rng rng(3);
    Tensor z = random_tensor({4, 3}, rng);
    for (double sigma : {0.01, 0.5, 20.0}) {
        Tensor d = model.denoise(z, sigma);
        const double cs = precondition(sigma, c.sigma_data).c_skip;
        for (std::size_t i = 0; i < z.numel(); ++i) EXPECT_EQ(d[i], cs * z[i]);
    }
}

TEST(Denoiser, PermutationEquivariantAndShape) {
    EDMConfig c = tiny_edm();
    Denoiser model(c, 4);
    Rng rng(5);
    randomize(model.params(), rng, 0.3);
    Tensor z = random_tensor({4, 3}, rng);
    std::vector<std::size_t> perm{2, 0, 3, 1};
    Tensor a = gather_rows(model.denoise(z, 0.7), perm);
    Tensor b = model.denoise(gather_rows(z, perm), 0.7);
    ASSERT_EQ(b.shape(), (Shape{4, 3}));
    for (std::size_t i = 0; i < a.numel(); ++i) {
        EXPECT_TRUE(std::isfinite(b[i]));
        EXPECT_NEAR(a[i], b[i], 1e-12);
    }
    EXPECT_THROW(model.denoise(Tensor({4, 5}, 0.0), 1.0), ShapeError);
}

TEST(Denoiser, ClassConditionChangesOutput) {
    EDMConfig c = tiny_edm();
    c.condition = ConditionMode::class_label;
    Denoiser model(c, 6);
    Rng rng(7);
    randomize(model.params(), rng, 0.3);
    Tensor z = random_tensor({4, 3}, rng);
    Tensor a = model.denoise(z, 1.0, 0), b = model.denoise(z, 1.0, 2);
    double diff = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) diff += std::abs(a[i] - b[i]);
    EXPECT_GT(diff, 0.0);
}

TEST(Denoiser, Gradient) {
    PrecisionGuard guard(Precision::f64);
    EDMConfig c = tiny_edm();
    Denoiser model(c, 8);
    Rng rng(9);
    randomize(model.params(), rng, 0.3);
    Tensor z = random_param({4, 3}, rng);
    auto f = [&] { return sum(square(model.denoise(z, 0.8))); };
    std::vector<Tensor> params{z};
    for (auto &[name, t] : model.params().entries()) params.push_back(t);
    GradCheckOptions opt;
    opt.max_coords_per_tensor = 4;
    EXPECT_LE(check_gradient(f, params, opt).max_rel_error, 1e-4);
}

TEST(LdmLoss, MatchesWeightedDenoisingError) {
    EDMConfig c = tiny_edm();
    Denoiser model(c, 10);
    Rng rng(11);
    randomize(model.params(), rng, 0.3);
    Tensor z0 = random_tensor({4, 3}, rng);
    Rng a(12), b(12);
    const double loss = ldm_loss(model, z0, 0, a).item();
    const double sigma = std::exp(c.p_mean + c.p_std * b.normal());
    Tensor noisy(z0.shape(), std::vector<double>(z0.values().begin(), z0.values().end()));
    for (double &v : noisy.mutable_values()) v += sigma * b.normal();
    Tensor d = model.denoise(noisy, sigma);
    double err = 0.0;
    for (std::size_t i = 0; i < d.numel(); ++i) err += (d[i] - z0[i]) * (d[i] - z0[i]);
    EXPECT_NEAR(loss, edm_weight(sigma, c.sigma_data) * err / 12.0, 1e-12 * loss);
    // a perfect denoiser has zero error, hence zero loss
    EXPECT_EQ(edm_weight(sigma, c.sigma_data) * mse(z0, z0).item(), 0.0);
}

TEST(Sampler, OracleDenoiserConverges) {
    Rng rng(13);
    Tensor target = random_tensor({4, 3}, rng);
    DenoiseFn oracle = [&](const Tensor &, double) { return target; };
    Rng s(14);
    Tensor out = sample_ode(oracle, {4, 3}, 40, 0.002, 80.0, 7.0, s);
    double diff = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) diff += (out[i] - target[i]) * (out[i] - target[i]);
    EXPECT_LE(std::sqrt(diff), 1e-3 * norm(target));
}

TEST(Sampler, SingleStepIsEuler) {
    Rng rng(15);
    Tensor target = random_tensor({2, 3}, rng);
    DenoiseFn oracle = [&](const Tensor &, double) { return target; };
    Rng a(16), b(16);
    Tensor out = sample_ode(oracle, {2, 3}, 1, 0.002, 80.0, 7.0, a);
    // z_T = 80 eps; one Euler step to sigma = 0 lands on D(z_T) exactly
    Tensor z_t({2, 3}, 0.0);
    for (double &v : z_t.mutable_values()) v = 80.0 * b.normal();
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double d = (z_t[i] - target[i]) / 80.0;
        EXPECT_NEAR(out[i], z_t[i] - 80.0 * d, 1e-12);
        EXPECT_NEAR(out[i], target[i], 1e-12);
    }
}

TEST(Sampler, DeterministicPerSeed) {
    EDMConfig c = tiny_edm();
    Denoiser model(c, 17);
    Rng rng(18);
    randomize(model.params(), rng, 0.3);
    Rng a(19), b(19);
    Tensor x = sample(model, 0, 5, a), y = sample(model, 0, 5, b);
    for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_EQ(x[i], y[i]);
    auto batch = sample_batch(model, 0, 3, 5, 20);
    auto again = sample_batch(model, 0, 3, 5, 20);
    ASSERT_EQ(batch.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t i = 0; i < batch[k].numel(); ++i) EXPECT_EQ(batch[k][i], again[k][i]);
}

TEST(Latents, FileRoundTripAndStats) {
    std::vector<LatentEntry> in{{"sphere_000", 0, Tensor({2, 2}, std::vector<double>{1, 2, 3, 4})},
                                {"torus_001", 0, Tensor({2, 2}, std::vector<double>{-1, 0, 1, 2})}};
    auto path = fresh_dir("latents") / "l.atlg";
    save_latents(path, in);
    auto back = load_latents(path);
    ASSERT_EQ(back.size(), 2u);
    EXPECT_EQ(back[0].id, "sphere_000");
    EXPECT_EQ(back[1].label, 2); // torus is the third kind
    EXPECT_EQ(back[1].latent[3], 2.0);
    // population std of {1,2,3,4,-1,0,1,2}
    const double mean = 1.5;
    double var = 0.0;
    for (double v : {1, 2, 3, 4, -1, 0, 1, 2}) var += (v - mean) * (v - mean);
    EXPECT_NEAR(latent_std(back), std::sqrt(var / 8.0), 1e-15);
}

TEST(LdmTrainer, LossDropsBelowQuarterOfInitialEma) {
    EDMConfig c = tiny_edm();
    c.latent_tokens = 4;
    c.latent_dim = 8;
    c.dim = 64;
    c.heads = 8;
    Rng rng(21);
    std::vector<LatentEntry> latents;
    for (int i = 0; i < 8; ++i) latents.push_back({"shape_" + std::to_string(i), 0, random_tensor({4, 8}, rng, 0.5)});
    c.sigma_data = latent_std(latents);
    Denoiser model(c, 22);
    LdmTrainOptions opt;
    opt.steps = 200;
    opt.batch = 256;
    opt.lr = 2e-2;
    opt.out_dir = fresh_dir("ldm_train");
    opt.checkpoint_every = 0;
    LdmTrainer trainer(model, latents, opt);
    trainer.run();
    const auto &h = trainer.history();
    ASSERT_EQ(h.size(), 200u);
    EXPECT_LT(h.back().loss_ema, 0.25 * h.front().loss_ema)
        << "initial ema " << h.front().loss_ema << " final " << h.back().loss_ema;
}

TEST(LdmCheckpoint, SaveLoad) {
    EDMConfig c = tiny_edm();
    c.condition = ConditionMode::class_label;
    Denoiser model(c, 23);
    Rng rng(24);
    randomize(model.params(), rng, 0.3);
    auto path = fresh_dir("ldm_ckpt") / "d.atlg";
    save_denoiser(path, model);
    Denoiser back = load_denoiser(path);
    EXPECT_EQ(back.config().to_key_values(), c.to_key_values());
    Tensor z = random_tensor({4, 3}, rng);
    Tensor a = model.denoise(z, 0.3, 1), b = back.denoise(z, 0.3, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}
