// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/checks.hpp"

#include "atlasgs/atlas.hpp"
#include "atlasgs/camera.hpp"
#include "atlasgs/diffusion.hpp"
#include "atlasgs/geometry.hpp"
#include "atlasgs/gradcheck.hpp"
#include "atlasgs/nn.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/rng.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>

namespace atlasgs {

namespace {

using Clock = std::chrono::steady_clock;

Tensor random_tensor(Shape shape, Rng &rng, double scale = 1.0) {
    std::vector<double> v(shape_numel(shape));
    for (auto &x : v) x = scale * rng.normal();
    return Tensor(std::move(shape), std::move(v));
}

std::vector<Tensor> store_tensors(const ParamStore &store) {
    std::vector<Tensor> out;
    for (const auto &[name, t] : store.entries()) out.push_back(t);
    return out;
}

/// sum(out * w) with a fixed random w, so every output entry contributes.
Tensor probe(const Tensor &out, const Tensor &w) { return sum(out * w); }

struct GradFamily {
    std::string name;
    double threshold;
    /// Builds instance `i`: the scalar function and its leaf inputs.
    std::function<std::pair<std::function<Tensor()>, std::vector<Tensor>>(Rng &)> build;
};

std::vector<UV> random_uvs(std::size_t n, Rng &rng) { return sample_uv_random(n, rng); }

Camera check_camera(int width, int height, Rng &rng) {
    const double az = rng.uniform(0.0, 2.0 * M_PI);
    const double el = rng.uniform(-0.4, 0.6);
    const double r = 3.0;
    const std::array<double, 3> eye{r * std::cos(el) * std::cos(az), r * std::cos(el) * std::sin(az),
                                    r * std::sin(el)};
    const double f = 0.9 * static_cast<double>(std::max(width, height));
    return Camera::look_at(eye, {0.0, 0.0, 0.0}, {0.0, 0.0, 1.0}, f, f, width, height, 0.1, 10.0);
}

GaussianTensors random_scene(std::size_t n, Rng &rng) {
    std::vector<double> means, scales, rots, opac, cols;
    for (std::size_t i = 0; i < n; ++i) {
        for (int k = 0; k < 3; ++k) means.push_back(rng.uniform(-0.6, 0.6));
        for (int k = 0; k < 3; ++k) scales.push_back(std::exp(rng.uniform(std::log(0.06), std::log(0.3))));
        for (int k = 0; k < 4; ++k) rots.push_back(rng.normal());
        opac.push_back(rng.uniform(0.2, 0.85));
        for (int k = 0; k < 3; ++k) cols.push_back(rng.uniform());
    }
    GaussianTensors g;
    g.means = Tensor({n, 3}, means);
    g.scales = Tensor({n, 3}, scales);
    g.rotations = Tensor({n, 4}, rots);
    g.opacities = Tensor({n, 1}, opac);
    g.colors = Tensor({n, 3}, cols);
    return g;
}

std::vector<GradFamily> gradient_families() {
    std::vector<GradFamily> f;
    const std::size_t d = 8;

    f.push_back({"grad.atlas_corner_weights", kGradientTolerance, [d](Rng &rng) {
                     auto store = std::make_shared<ParamStore>();
                     AtlasDecoderConfig ac;
                     ac.dim = d;
                     ac.frequencies = 3;
                     ac.hidden = 8;
                     auto dec = std::make_shared<AtlasDecoder>(*store, "atlas", ac, rng);
                     const std::size_t m = 2, s = 3;
                     Tensor feats = random_tensor({m * kCorners, d}, rng);
                     Tensor uv = uv_rows(random_uvs(s, rng), m);
                     Tensor w = random_tensor({m * s, kCorners}, rng);
                     auto params = store_tensors(*store);
                     params.push_back(feats);
                     return std::make_pair(
                         std::function<Tensor()>([=] {
                             return probe(dec->corner_weights(uv, feats, Branch::geometry), w);
                         }),
                         params);
                 }});

    f.push_back({"grad.atlas_decode", kGradientTolerance, [d](Rng &rng) {
                     auto store = std::make_shared<ParamStore>();
                     AtlasDecoderConfig ac;
                     ac.dim = d;
                     ac.frequencies = 3;
                     ac.hidden = 8;
                     auto dec = std::make_shared<AtlasDecoder>(*store, "atlas", ac, rng);
                     const std::size_t m = 2, s = 3;
                     Tensor centers = random_tensor({m, 3}, rng, 0.5);
                     Tensor geom = random_tensor({m * kCorners, d}, rng);
                     Tensor app = random_tensor({m * kCorners, d}, rng);
                     Tensor uv = uv_rows(random_uvs(s, rng), m);
                     const std::size_t n = m * s;
                     Tensor w0 = random_tensor({n, 3}, rng), w1 = random_tensor({n, 3}, rng),
                            w2 = random_tensor({n, 4}, rng), w3 = random_tensor({n, 1}, rng),
                            w4 = random_tensor({n, 3}, rng);
                     auto params = store_tensors(*store);
                     params.insert(params.end(), {centers, geom, app});
                     return std::make_pair(std::function<Tensor()>([=] {
                                               const auto g = dec->decode(uv, centers, geom, app);
                                               return probe(g.means, w0) + probe(g.scales, w1) +
                                                      probe(g.rotations, w2) +
                                                      probe(g.opacities, w3) + probe(g.colors, w4);
                                           }),
                                           params);
                 }});

    auto attention_family = [d](const std::string &name, int kind) {
        return GradFamily{name, kGradientTolerance, [d, kind](Rng &rng) {
                              auto store = std::make_shared<ParamStore>();
                              auto a = std::make_shared<AttentionParams>(*store, "a", d, 2, 2, rng);
                              auto b = std::make_shared<AttentionParams>(*store, "b", d, 2, 2, rng);
                              const std::size_t groups = 3, per = 4;
                              Tensor x = random_tensor({groups * per, d}, rng);
                              Tensor kv = random_tensor({5, d}, rng);
                              Tensor w = random_tensor({groups * per, d}, rng);
                              auto params = store_tensors(*store);
                              params.push_back(x);
                              if (kind >= 2) params.push_back(kv);
                              return std::make_pair(
                                  std::function<Tensor()>([=] {
                                      switch (kind) {
                                      case 0: return probe(self_attention(x, *a), w);
                                      case 1: return probe(self_attention(x, *a, groups), w);
                                      case 2: return probe(cross_attention(x, kv, *b), w);
                                      default:
                                          return probe(cross_attention(self_attention(x, *a), kv, *b), w);
                                      }
                                  }),
                                  params);
                          }};
    };
    f.push_back(attention_family("grad.attention_self", 0));
    f.push_back(attention_family("grad.attention_local", 1));
    f.push_back(attention_family("grad.attention_cross", 2));
    f.push_back(attention_family("grad.attention_stack", 3));

    f.push_back({"grad.loss_chamfer", kGradientTolerance, [](Rng &rng) {
                     Tensor p = random_tensor({9, 3}, rng), q = random_tensor({7, 3}, rng);
                     return std::make_pair(std::function<Tensor()>([=] { return chamfer(p, q); }),
                                           std::vector<Tensor>{p, q});
                 }});
    f.push_back({"grad.loss_emd", kGradientTolerance, [](Rng &rng) {
                     Tensor p = random_tensor({8, 3}, rng), q = random_tensor({8, 3}, rng);
                     return std::make_pair(std::function<Tensor()>([=] { return emd_approx(p, q); }),
                                           std::vector<Tensor>{p, q});
                 }});
    f.push_back({"grad.loss_kl", kGradientTolerance, [](Rng &rng) {
                     Tensor m = random_tensor({4, 3}, rng), lv = random_tensor({4, 3}, rng);
                     return std::make_pair(
                         std::function<Tensor()>([=] { return kl_diag_gaussian(m, lv); }),
                         std::vector<Tensor>{m, lv});
                 }});
    f.push_back({"grad.loss_mse", kGradientTolerance, [](Rng &rng) {
                     Tensor a = random_tensor({5, 3}, rng), b = random_tensor({5, 3}, rng);
                     return std::make_pair(std::function<Tensor()>([=] { return mse(a, b); }),
                                           std::vector<Tensor>{a, b});
                 }});

    f.push_back({"grad.denoiser", kGradientTolerance, [](Rng &rng) {
                     EDMConfig c;
                     c.latent_tokens = 4;
                     c.latent_dim = 3;
                     c.dim = 8;
                     c.heads = 2;
                     c.blocks = 1;
                     c.noise_frequencies = 2;
                     auto den = std::make_shared<Denoiser>(c, rng.next_u64());
                     // Non-zero output map so gradients reach every block.
                     for (auto &[name, t] : den->params().entries()) {
                         if (name == "ldm.output.weight") {
                             for (auto &v : t.mutable_values()) v = 0.3 * rng.normal();
                         }
                     }
                     Tensor z = random_tensor({4, 3}, rng);
                     Tensor w = random_tensor({4, 3}, rng);
                     const double sigma = std::exp(rng.uniform(-2.0, 2.0));
                     auto params = store_tensors(den->params());
                     params.push_back(z);
                     return std::make_pair(
                         std::function<Tensor()>([=] { return probe(den->denoise(z, sigma), w); }),
                         params);
                 }});

    f.push_back({"grad.rasterize", kRasterGradientTolerance, [](Rng &rng) {
                     const GaussianTensors g = random_scene(6, rng);
                     const int size = 16;
                     const Camera cam = check_camera(size, size, rng);
                     const Rgb bg{rng.uniform(), rng.uniform(), rng.uniform()};
                     Tensor wr = random_tensor({static_cast<std::size_t>(size), static_cast<std::size_t>(size), 3}, rng);
                     Tensor wa = random_tensor({static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, rng);
                     Tensor wd = random_tensor({static_cast<std::size_t>(size), static_cast<std::size_t>(size)}, rng);
                     return std::make_pair(std::function<Tensor()>([=] {
                                               const RenderTensors r = rasterize(g, cam, bg);
                                               return probe(r.rgb, wr) + probe(r.alpha, wa) +
                                                      probe(r.depth, wd);
                                           }),
                                           std::vector<Tensor>{g.means, g.scales, g.rotations,
                                                               g.opacities, g.colors});
                 }});
    return f;
}

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

} // namespace

std::vector<CheckReport> gradient_checks(const CheckSuiteOptions &options) {
    PrecisionGuard f64(Precision::f64);
    std::vector<CheckReport> out;
    for (const auto &family : gradient_families()) {
        const auto t0 = Clock::now();
        CheckReport r;
        r.name = family.name;
        r.threshold = family.threshold;
        for (std::size_t i = 0; i < options.gradient_instances; ++i) {
            Rng rng(Rng::derive(options.seed, {std::hash<std::string>{}(family.name), i}));
            auto [fn, params] = family.build(rng);
            GradCheckOptions go;
            go.max_coords_per_tensor = options.coords_per_tensor;
            go.seed = Rng::derive(options.seed, {i, 17});
            go.inject_sign_error = options.inject_sign_error;
            const GradCheckResult res = check_gradient(fn, params, go);
            r.max_error = std::max(r.max_error, res.max_rel_error);
            ++r.instances;
        }
        r.passed = r.instances > 0 && r.max_error <= r.threshold;
        r.seconds = seconds_since(t0);
        out.push_back(r);
    }
    return out;
}

CheckReport renderer_oracle_check(const CheckSuiteOptions &options) {
    const auto t0 = Clock::now();
    CheckReport r;
    r.name = "render.oracle_equivalence";
    r.threshold = kRenderOracleTolerance;
    for (std::size_t i = 0; i < options.render_scenes; ++i) {
        Rng rng(Rng::derive(options.seed, {0x5ce7eULL, i}));
        const std::size_t n = 1 + rng.index(64);
        const auto scene = random_scene(n, rng).to_gaussians();
        const Camera cam = check_camera(32, 32, rng);
        const Rgb bg{rng.uniform(), rng.uniform(), rng.uniform()};
        const RenderOutput a = rasterize(scene, cam, bg);
        const RenderOutput b = rasterize_reference(scene, cam, bg);
        auto diff = [&](const std::vector<double> &x, const std::vector<double> &y) {
            double m = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) m = std::max(m, std::abs(x[k] - y[k]));
            return m;
        };
        r.max_error = std::max({r.max_error, diff(a.rgb, b.rgb), diff(a.alpha, b.alpha),
                                diff(a.depth, b.depth)});
        ++r.instances;
    }
    r.passed = r.instances > 0 && r.max_error <= r.threshold;
    r.seconds = seconds_since(t0);
    return r;
}

namespace {

std::vector<Vec3> random_points(std::size_t n, Rng &rng) {
    std::vector<Vec3> p(n);
    for (auto &x : p) x = {rng.normal(), rng.normal(), rng.normal()};
    return p;
}

double distance(const Vec3 &a, const Vec3 &b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

} // namespace

CheckReport emd_fidelity_check(const CheckSuiteOptions &options) {
    const auto t0 = Clock::now();
    CheckReport r;
    r.name = "geometry.emd_approx_vs_exact";
    r.threshold = kEmdRelativeTolerance;
    static constexpr std::size_t sizes[] = {8, 16, 32, 64};
    for (std::size_t i = 0; i < options.emd_instances; ++i) {
        Rng rng(Rng::derive(options.seed, {0xe3dULL, i}));
        const std::size_t n = sizes[i % 4];
        const auto p = random_points(n, rng);
        const auto q = random_points(n, rng);
        const double exact = emd_exact(p, q);
        const double approx = emd_approx(p, q);
        r.max_error = std::max(r.max_error, std::abs(approx - exact) / exact);
        ++r.instances;
    }
    r.passed = r.instances > 0 && r.max_error <= r.threshold;
    r.seconds = seconds_since(t0);
    return r;
}

CheckReport emd_bruteforce_check(const CheckSuiteOptions &options) {
    const auto t0 = Clock::now();
    CheckReport r;
    r.name = "geometry.emd_exact_vs_bruteforce";
    r.threshold = kIdentityTolerance;
    bool exact_match = true;
    for (std::size_t i = 0; i < options.brute_force_instances; ++i) {
        Rng rng(Rng::derive(options.seed, {0xb7ceULL, i}));
        const std::size_t n = 1 + i % 6;
        const auto p = random_points(n, rng);
        const auto q = random_points(n, rng);
        std::vector<std::size_t> perm(n);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        auto cost = [&](const std::vector<std::size_t> &m) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += distance(p[k], q[m[k]]);
            return s;
        };
        double best = cost(perm);
        while (std::next_permutation(perm.begin(), perm.end())) best = std::min(best, cost(perm));
        std::vector<std::size_t> match;
        const double hung = emd_exact(p, q, &match);
        // The Hungarian matching must be one of the optimal permutations.
        exact_match = exact_match && cost(match) == best;
        r.max_error = std::max(r.max_error, std::abs(hung - best / static_cast<double>(n)) /
                                                (best / static_cast<double>(n)));
        ++r.instances;
    }
    r.passed = r.instances > 0 && exact_match && r.max_error <= r.threshold;
    r.seconds = seconds_since(t0);
    return r;
}

CheckReport precondition_check(const CheckSuiteOptions &) {
    const auto t0 = Clock::now();
    CheckReport r;
    r.name = "diffusion.precondition_identities";
    r.threshold = kIdentityTolerance;
    const std::size_t points = 601;
    for (double sd : {0.5, 1.0, 0.137}) {
        for (std::size_t i = 0; i < points; ++i) {
            const double sigma = std::pow(10.0, -3.0 + 6.0 * static_cast<double>(i) / (points - 1));
            const Preconditioning p = precondition(sigma, sd);
            const double lhs = p.c_out * p.c_out + p.c_skip * p.c_skip * (sigma * sigma + sd * sd);
            const double e1 = std::abs(lhs - sd * sd) / (sd * sd);
            const double e2 = std::abs(edm_weight(sigma, sd) * p.c_out * p.c_out - 1.0);
            r.max_error = std::max({r.max_error, e1, e2});
            ++r.instances;
        }
    }
    r.passed = r.max_error <= r.threshold;
    r.seconds = seconds_since(t0);
    return r;
}

std::vector<CheckReport> run_check_suite(const CheckSuiteOptions &options) {
    auto out = gradient_checks(options);
    out.push_back(renderer_oracle_check(options));
    out.push_back(emd_fidelity_check(options));
    out.push_back(emd_bruteforce_check(options));
    out.push_back(precondition_check(options));
    return out;
}

std::string reports_to_json(const std::vector<CheckReport> &reports) {
    nlohmann::json checks = nlohmann::json::array();
    bool all = true;
    for (const auto &r : reports) {
        checks.push_back({{"name", r.name},
                          {"max_error", r.max_error},
                          {"threshold", r.threshold},
                          {"passed", r.passed},
                          {"instances", r.instances},
                          {"seconds", r.seconds}});
        all = all && r.passed;
    }
    nlohmann::json doc{{"passed", all}, {"checks", checks}};
    return doc.dump(2);
}

} // namespace atlasgs
