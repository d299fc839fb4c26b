// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance harness. Prints one PASS/FAIL line per criterion and exits
// nonzero if any selected criterion fails.
//
//   atlasgs_acceptance            all criteria
//   atlasgs_acceptance 2 5 8      a subset

#include "atlasgs/atlas.hpp"
#include "atlasgs/checks.hpp"
#include "atlasgs/datagen.hpp"
#include "atlasgs/diffusion.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/vae.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

using namespace atlasgs;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool passed = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof(buf), f, args...);
    return buf;
}

// -- 1 ---------------------------------------------------------------------------

Outcome criterion1() {
    PrecisionGuard guard(Precision::f64);
    CheckSuiteOptions o;
    o.gradient_instances = 20;
    const auto t0 = Clock::now();
    const auto reports = gradient_checks(o);
    const double secs = seconds_since(t0);
    bool ok = !reports.empty() && secs <= 300.0;
    std::string worst;
    double worst_ratio = 0.0;
    for (const auto &r : reports) {
        std::printf("    %-40s max_rel %.3e threshold %.0e instances %zu %s\n", r.name.c_str(),
                    r.max_error, r.threshold, r.instances, r.passed ? "ok" : "FAILED");
        ok = ok && r.passed && r.instances >= 20;
        if (r.max_error / r.threshold >= worst_ratio) {
            worst_ratio = r.max_error / r.threshold;
            worst = r.name;
        }
    }
    return {ok, fmt("%zu op families, worst %s at %.2f of threshold, %.1f s (limit 300 s)",
                    reports.size(), worst.c_str(), worst_ratio, secs)};
}

// -- 2 ---------------------------------------------------------------------------

std::vector<double> mlp_direct(const Mlp &mlp, const std::vector<double> &x) {
    auto affine = [](const Linear &l, const std::vector<double> &in) {
        const std::size_t n_in = l.weight.dim(0), n_out = l.weight.dim(1);
        std::vector<double> out(n_out, 0.0);
        for (std::size_t o = 0; o < n_out; ++o) {
            double s = l.bias.defined() ? l.bias[o] : 0.0;
            for (std::size_t i = 0; i < n_in; ++i) s += in[i] * l.weight[i * n_out + o];
            out[o] = s;
        }
        return out;
    };
    auto h = affine(mlp.fc1, x);
    for (double &v : h) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    return affine(mlp.fc2, h);
}

std::vector<double> sinusoid_direct(double u, double v, std::size_t frequencies) {
    std::vector<double> out;
    for (double p : {u, v})
        for (std::size_t f = 0; f < frequencies; ++f) {
            const double w = std::ldexp(M_PI, static_cast<int>(f));
            out.push_back(std::sin(w * p));
            out.push_back(std::cos(w * p));
        }
    return out;
}

std::array<double, 4> weights_direct(double u, double v, const std::vector<double> &f,
                                     const FourierEncoder &enc) {
    const std::size_t d = f.size() / 4;
    const auto eq = mlp_direct(enc.mlp, sinusoid_direct(u, v, enc.frequencies));
    std::array<double, 4> l{};
    for (std::size_t k = 0; k < 4; ++k) {
        const auto ek = mlp_direct(enc.mlp, sinusoid_direct(kCornerUV[k][0], kCornerUV[k][1], enc.frequencies));
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += eq[c] * (f[k * d + c] + ek[c]);
        l[k] = dot / std::sqrt(static_cast<double>(d));
    }
    const double mx = *std::max_element(l.begin(), l.end());
    double z = 0.0;
    for (double &x : l) z += (x = std::exp(x - mx));
    for (double &x : l) x /= z;
    return l;
}

Outcome criterion2() {
    PrecisionGuard guard(Precision::f64);
    const std::size_t d = 16;
    ParamStore store;
    Rng init(2);
    AtlasDecoderConfig cfg;
    cfg.dim = d;
    cfg.hidden = 32;
    cfg.frequencies = 6;
    AtlasDecoder decoder(store, "atlas", cfg, init);
    // perturb every weight so no head sits at its initial value
    for (auto &[name, t] : store.entries())
        for (double &v : t.mutable_values()) v += 0.3 * init.normal();
    Rng rng(20);
    double sum_err = 0.0, formula_err = 0.0, batch_err = 0.0;
    const std::size_t trials = 1000;
    for (std::size_t i = 0; i < trials; ++i) {
        const double u = rng.uniform(), v = rng.uniform();
        std::vector<double> f(4 * d);
        for (double &x : f) x = rng.normal();
        const Branch b = i % 2 ? Branch::appearance : Branch::geometry;
        const auto w = corner_weights(UV{u, v}, f, decoder, b);
        const auto ref = weights_direct(u, v, f, decoder.uv_encoder(b));
        const Tensor wt = decoder.corner_weights(Tensor({1, 2}, std::vector<double>{u, v}),
                                                 Tensor({4, d}, f), b);
        double s = 0.0;
        for (int k = 0; k < 4; ++k) {
            s += w[k];
            formula_err = std::max(formula_err, std::abs(w[k] - ref[k]));
            batch_err = std::max(batch_err, std::abs(wt[k] - ref[k]));
        }
        sum_err = std::max(sum_err, std::abs(s - 1.0));
    }
    const bool ok = sum_err <= 1e-12 && formula_err <= 1e-12 && batch_err <= 1e-12;
    return {ok, fmt("%zu instances: |sum-1| %.2e, pointwise vs direct %.2e, batched vs direct %.2e "
                    "(limit 1e-12)",
                    trials, sum_err, formula_err, batch_err)};
}

// -- 3 ---------------------------------------------------------------------------

/// Full patch count with narrow widths, enough to exercise count bookkeeping.
VAEConfig metadata_config(std::size_t patches) {
    VAEConfig c;
    c.latent_tokens = 4;
    c.dim = 8;
    c.latent_dim = 4;
    c.patches = patches;
    c.heads = 1;
    c.frequencies = 2;
    c.decoder_hidden = 8;
    c.input_points = 64;
    c.input_views = 0;
    c.image_width = 64;
    c.image_height = 64;
    return c;
}

Outcome criterion3() {
    const auto dir = std::filesystem::temp_directory_path() / "atlasgs_acceptance";
    std::filesystem::create_directories(dir);
    const std::map<std::size_t, std::size_t> expected{{2, 8192}, {4, 32768}, {7, 100352}};
    bool ok = true;
    std::optional<std::size_t> params;
    std::vector<double> first_values;
    std::map<std::size_t, double> times;
    const Camera cam = default_camera_rig()[0];
    for (const auto &[alpha, count] : expected) {
        VAEConfig c = metadata_config(2048);
        c.grid = alpha;
        const auto path = dir / ("alpha_" + std::to_string(alpha) + ".atlg");
        save_vae(path, AtlasVAE(c, 33));
        const AtlasVAE model = load_vae(path);
        const std::size_t loaded = model.params().count();
        std::vector<double> values;
        for (const auto &[name, t] : model.params().entries())
            values.insert(values.end(), t.values().begin(), t.values().end());
        if (!params) {
            params = loaded;
            first_values = values;
        }
        ok = ok && loaded == *params && values == first_values;
        NoGradGuard no_grad;
        Rng rng(34);
        Tensor z0({c.latent_tokens, c.latent_dim}, 0.0);
        for (double &v : z0.mutable_values()) v = rng.normal();
        double best = 1e30;
        std::size_t decoded = 0;
        for (int rep = 0; rep < 3; ++rep) {
            const auto t0 = Clock::now();
            const auto g = model.decode_grid(model.decode(z0), alpha);
            const auto img = rasterize(g, cam, kDefaultBackground);
            best = std::min(best, seconds_since(t0));
            decoded = g.size();
            (void)img;
        }
        times[alpha] = best;
        std::printf("    alpha %zu: %zu Gaussians (expected %zu), %zu parameters, decode+render %.3f s\n",
                    alpha, decoded, count, loaded, best);
        ok = ok && decoded == count;
    }
    std::string scaling;
    for (std::size_t alpha : {4, 7}) {
        const double ratio = times[alpha] / times[2];
        const double budget = 2.0 * static_cast<double>(alpha * alpha) / 4.0;
        scaling += fmt(" t%zu/t2 %.2f (limit %.1f)", alpha, ratio, budget);
        ok = ok && ratio <= budget;
    }
    return {ok, fmt("counts 8192/32768/100352, parameter count %zu identical across alpha;%s",
                    params.value_or(0), scaling.c_str())};
}

// -- 4 / 5 / 8 ----------------------------------------------------------------------

Outcome criterion4() {
    CheckSuiteOptions o;
    o.render_scenes = 50;
    const auto r = renderer_oracle_check(o);
    const bool ok = r.passed && r.instances == 50 && r.seconds <= 120.0;
    return {ok, fmt("%zu scenes, max per-pixel difference %.2e (limit 1e-5), %.2f s (limit 120 s)",
                    r.instances, r.max_error, r.seconds)};
}

Outcome criterion5() {
    CheckSuiteOptions o;
    o.emd_instances = 400; // 100 per size
    o.brute_force_instances = 60;
    const auto a = emd_fidelity_check(o);
    const auto b = emd_bruteforce_check(o);
    return {a.passed && b.passed,
            fmt("approx vs Hungarian max rel %.4f over %zu instances (limit 0.05); Hungarian vs "
                "brute force max rel %.1e over %zu instances, optimal matching %s",
                a.max_error, a.instances, b.max_error, b.instances, b.passed ? "yes" : "no")};
}

Outcome criterion8() {
    double worst = 0.0;
    std::size_t n = 0;
    for (double sd : {0.25, 0.5, 1.0, 2.0}) {
        for (int i = 0; i <= 120; ++i) {
            const double sigma = std::pow(10.0, -3.0 + 6.0 * i / 120.0);
            const Preconditioning p = precondition(sigma, sd);
            const double e1 =
                std::abs(p.c_out * p.c_out + p.c_skip * p.c_skip * (sigma * sigma + sd * sd) - sd * sd) /
                (sd * sd);
            const double e2 = std::abs(edm_weight(sigma, sd) * p.c_out * p.c_out - 1.0);
            worst = std::max({worst, e1, e2});
            ++n;
        }
    }
    const auto suite = precondition_check({});
    return {worst <= 1e-12 && suite.passed,
            fmt("%zu (sigma, sigma_data) pairs on a log grid over [1e-3, 1e3], max rel error %.2e "
                "(limit 1e-12)",
                n, std::max(worst, suite.max_error))};
}

// -- 6 ---------------------------------------------------------------------------

Outcome criterion6() {
    bool ok = true;
    std::string detail;
    for (std::size_t m : {8, 64, 2048}) {
        VAEConfig c = metadata_config(m);
        c.two_branch = false;
        c.patch_blocks = 1; // exactly one patch-level self-attention layer
        Rng rng(60 + m);
        Tensor zl({m, c.dim}, 0.0);
        for (double &v : zl.mutable_values()) v = rng.normal();
        NoGradGuard no_grad;
        const AtlasVAE local(c, 61);
        reset_attention_score_pairs();
        local.decode_patch_features(zl);
        const std::size_t local_pairs = attention_score_pairs();
        VAEConfig full_cfg = c;
        full_cfg.local_attention = false;
        const AtlasVAE full(full_cfg, 61);
        reset_attention_score_pairs();
        full.decode_patch_features(zl);
        const std::size_t full_pairs = attention_score_pairs();
        const std::size_t beta = c.corners;
        // the default decoder: two branches x patch_blocks layers, each local
        VAEConfig deep = metadata_config(m);
        const AtlasVAE deep_model(deep, 62);
        reset_attention_score_pairs();
        deep_model.decode_patch_features(zl);
        const std::size_t layers = 2 * deep.patch_blocks;
        const std::size_t deep_pairs = attention_score_pairs();
        const bool row = local_pairs == m * beta * beta && full_pairs == (m * beta) * (m * beta) &&
                         deep_pairs == layers * m * beta * beta;
        std::printf("    M=%-5zu local %zu (M*b^2 = %zu), naive %zu ((M*b)^2 = %zu), %zu local layers %zu\n",
                    m, local_pairs, m * beta * beta, full_pairs, (m * beta) * (m * beta), layers,
                    deep_pairs);
        ok = ok && row;
        detail += fmt(" M=%zu %zu vs %zu;", m, local_pairs, full_pairs);
    }
    return {ok, "score pairs per layer, local vs naive:" + detail};
}

// -- 7 / 9 / 10 ------------------------------------------------------------------

std::vector<DatasetRecord> overfit_suite() {
    DatagenOptions o;
    o.kinds = {ShapeKind::sphere, ShapeKind::box, ShapeKind::torus, ShapeKind::superquadric};
    o.shapes_per_kind = 1;
    o.seed = 7;
    return generate_dataset(o);
}

/// Toy configuration: n=16, d=64, d0=8, M=64, alpha=4, 64x64 images, 4 views.
VAEConfig toy_config() {
    VAEConfig c;
    c.latent_tokens = 16;
    c.dim = 64;
    c.latent_dim = 8;
    c.patches = 64;
    c.grid = 4;
    c.image_width = 64;
    c.image_height = 64;
    c.views = 4;
    return c;
}

struct OverfitRun {
    double base = 0.0;
    double final = 0.0;
    double psnr = 0.0;
    double seconds = 0.0;
    std::size_t steps = 0;
};

OverfitRun overfit(AtlasVAE &model, const std::vector<DatasetRecord> &data, std::size_t s1,
                   std::size_t s2, std::uint64_t seed, bool verbose) {
    VaeTrainOptions opt;
    opt.stage1_steps = s1;
    opt.stage2_steps = s2;
    opt.seed = seed;
    opt.psnr_every = 0;
    opt.checkpoint_every = 0;
    VaeTrainer trainer(model, data, opt);
    OverfitRun r;
    // the full objective including the render term, before any update
    r.base = trainer.evaluate(2).total;
    if (verbose)
        trainer.on_epoch = [](const EpochMetrics &e) {
            if (e.epoch % 50 == 0) {
                std::printf("    epoch %4zu stage %d step %5zu loss %.5f\n", e.epoch, e.stage, e.step,
                            e.loss.total);
                std::fflush(stdout);
            }
        };
    const auto t0 = Clock::now();
    trainer.run_stage(1);
    trainer.run_stage(2);
    r.seconds = seconds_since(t0);
    r.final = trainer.evaluate(2).total;
    r.psnr = trainer.training_psnr();
    r.steps = trainer.global_step();
    return r;
}

struct Shared {
    std::vector<DatasetRecord> data;
    std::unique_ptr<AtlasVAE> vae;
};

Outcome criterion7(Shared &shared) {
    if (shared.data.empty()) shared.data = overfit_suite();
    shared.vae = std::make_unique<AtlasVAE>(toy_config(), 1);
    const OverfitRun r = overfit(*shared.vae, shared.data, 1000, 1000, 1, true);
    const double ratio = r.final / r.base;
    const bool ok = ratio < 0.10 && r.psnr >= 20.0 && r.steps <= 2000 && r.seconds <= 1800.0;
    return {ok, fmt("L_total %.5f -> %.5f (ratio %.4f, limit 0.10), training-view PSNR %.2f dB (limit 20), "
                    "%zu steps, %.0f s (limit 1800 s)",
                    r.base, r.final, ratio, r.psnr, r.steps, r.seconds)};
}

struct Moments {
    double mean = 0.0;
    double var = 0.0; // unbiased
    std::size_t n = 0;
};

Moments moments(const std::vector<double> &x) {
    Moments m;
    m.n = x.size();
    for (double v : x) m.mean += v;
    m.mean /= static_cast<double>(m.n);
    for (double v : x) m.var += (v - m.mean) * (v - m.mean);
    m.var /= static_cast<double>(m.n - 1);
    return m;
}

Outcome criterion9(Shared &shared) {
    if (shared.data.empty()) shared.data = overfit_suite();
    if (!shared.vae) {
        std::printf("    no overfit model from criterion 7 in this run; training a short stage-1 model\n");
        shared.vae = std::make_unique<AtlasVAE>(toy_config(), 1);
        overfit(*shared.vae, shared.data, 300, 0, 1, false);
    }
    const AtlasVAE &vae = *shared.vae;
    std::vector<LatentEntry> latents;
    {
        NoGradGuard no_grad;
        for (const auto &rec : shared.data)
            latents.push_back({rec.id, rec.label, vae.encode(make_input(rec, vae.config())).mean});
    }
    EDMConfig ec;
    ec.latent_tokens = vae.config().latent_tokens;
    ec.latent_dim = vae.config().latent_dim;
    ec.sigma_data = latent_std(latents);
    Denoiser model(ec, 9);
    LdmTrainOptions lo;
    lo.steps = 200;
    lo.checkpoint_every = 0;
    LdmTrainer trainer(model, latents, lo);
    const auto t0 = Clock::now();
    trainer.run();
    const auto samples = sample_batch(model, 0, 256, 40, 99);
    const double secs = seconds_since(t0);

    bool stats_ok = true;
    double worst = 0.0;
    const std::size_t channels = ec.latent_dim;
    for (std::size_t c = 0; c < channels; ++c) {
        std::vector<double> x, y;
        for (const auto &l : latents)
            for (std::size_t t = 0; t < ec.latent_tokens; ++t) x.push_back(l.latent[t * channels + c]);
        for (const auto &s : samples)
            for (std::size_t t = 0; t < ec.latent_tokens; ++t) y.push_back(s[t * channels + c]);
        const Moments a = moments(x), b = moments(y);
        const double se_mean = std::sqrt(a.var / a.n + b.var / b.n);
        const double se_var = std::sqrt(2.0 * a.var * a.var / (a.n - 1) + 2.0 * b.var * b.var / (b.n - 1));
        const double zm = std::abs(a.mean - b.mean) / se_mean;
        const double zv = std::abs(a.var - b.var) / se_var;
        std::printf("    channel %zu: mean %.4f vs %.4f (%.2f SE), var %.4f vs %.4f (%.2f SE)\n", c, a.mean,
                    b.mean, zm, a.var, b.var, zv);
        worst = std::max({worst, zm, zv});
        stats_ok = stats_ok && zm <= 3.0 && zv <= 3.0;
    }

    Rng rng(90);
    Tensor target({ec.latent_tokens, ec.latent_dim}, 0.0);
    for (double &v : target.mutable_values()) v = rng.normal();
    DenoiseFn oracle = [&](const Tensor &, double) { return target; };
    Rng srng(91);
    const Tensor out = sample_ode(oracle, target.shape(), 40, ec.sigma_min, ec.sigma_max, ec.rho, srng);
    double diff = 0.0, norm = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
        diff += (out[i] - target[i]) * (out[i] - target[i]);
        norm += target[i] * target[i];
    }
    const double rel = std::sqrt(diff / norm);
    const bool ok = stats_ok && rel <= 1e-3;
    return {ok, fmt("256 samples x 40 steps vs %zu latents: worst channel deviation %.2f SE (limit 3); "
                    "oracle sampler rel error %.2e (limit 1e-3); %.0f s",
                    latents.size(), worst, rel, secs)};
}

Outcome criterion10(Shared &shared) {
    if (shared.data.empty()) shared.data = overfit_suite();
    // equal reduced budget for every variant
    const std::size_t s1 = 400, s2 = 400;
    struct Variant {
        const char *name;
        void (*apply)(VAEConfig &);
    };
    const Variant variants[] = {
        {"full", [](VAEConfig &) {}},
        {"bilinear_weights", [](VAEConfig &c) { c.weight_mode = CornerWeightMode::bilinear; }},
        {"single_branch", [](VAEConfig &c) { c.two_branch = false; }},
        {"no_global", [](VAEConfig &c) { c.global_broadcast = false; }},
    };
    std::map<std::string, double> mean_psnr;
    for (const auto &v : variants) {
        double sum = 0.0;
        std::string runs;
        for (std::uint64_t seed : {101, 102, 103}) {
            VAEConfig c = toy_config();
            v.apply(c);
            AtlasVAE model(c, seed);
            const OverfitRun r = overfit(model, shared.data, s1, s2, seed, false);
            sum += r.psnr;
            runs += fmt(" %.2f", r.psnr);
        }
        mean_psnr[v.name] = sum / 3.0;
        std::printf("    %-18s PSNR per seed%s, mean %.2f dB\n", v.name, runs.c_str(), mean_psnr[v.name]);
        std::fflush(stdout);
    }
    const double full = mean_psnr["full"];
    const bool a = full >= mean_psnr["bilinear_weights"];
    const bool b = full >= mean_psnr["single_branch"];
    const bool c = full >= mean_psnr["no_global"];
    return {a && b && c,
            fmt("%zu+%zu steps x 3 seeds: full %.2f vs bilinear %.2f (%s), single-branch %.2f (%s), "
                "no-global %.2f (%s)",
                s1, s2, full, mean_psnr["bilinear_weights"], a ? "ok" : "reversed", mean_psnr["single_branch"],
                b ? "ok" : "reversed", mean_psnr["no_global"], c ? "ok" : "reversed")};
}

} // namespace

int main(int argc, char **argv) {
    std::set<int> selected;
    for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
    if (selected.empty())
        for (int i = 1; i <= 10; ++i) selected.insert(i);

    Shared shared;
    std::vector<std::pair<int, Outcome>> results;
    for (int id : selected) {
        std::printf("criterion %d: running\n", id);
        std::fflush(stdout);
        const auto t0 = Clock::now();
        Outcome o;
        try {
            switch (id) {
            case 1: o = criterion1(); break;
            case 2: o = criterion2(); break;
            case 3: o = criterion3(); break;
            case 4: o = criterion4(); break;
            case 5: o = criterion5(); break;
            case 6: o = criterion6(); break;
            case 7: o = criterion7(shared); break;
            case 8: o = criterion8(); break;
            case 9: o = criterion9(shared); break;
            case 10: o = criterion10(shared); break;
            default: o = {false, "unknown criterion"};
            }
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("criterion %d: %s  %s  [%.1f s]\n", id, o.passed ? "PASS" : "FAIL", o.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
        results.emplace_back(id, o);
    }
    std::printf("\nsummary\n");
    bool all = true;
    for (const auto &[id, o] : results) {
        std::printf("  criterion %2d  %s\n", id, o.passed ? "PASS" : "FAIL");
        all = all && o.passed;
    }
    return all ? 0 : 1;
}
