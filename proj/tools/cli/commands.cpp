// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include "atlasgs/checks.hpp"
#include "atlasgs/datagen.hpp"
#include "atlasgs/diffusion.hpp"
#include "atlasgs/geometry.hpp"
#include "atlasgs/io.hpp"
#include "atlasgs/parallel.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/vae.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

namespace atlasgs::cli {

namespace fs = std::filesystem;

namespace {

void ensure_dir(const fs::path &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw DataError(dir.string() + ": cannot create output directory");
    }
}

void require_file(const fs::path &path, const std::string &what) {
    if (!fs::is_regular_file(path)) {
        throw DataError(path.string() + ": " + what + " not found");
    }
}

/// Applies `key=value` overrides from a config file then from flags.
template <class Config>
void apply_overrides(Config &config, const ModelOverrides &o) {
    if (!o.file.empty()) {
        for (const auto &[k, v] : read_config_file(o.file)) config.set(k, v);
    }
    for (const auto &item : o.set) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            throw UsageError("expected key=value, got '" + item + "'");
        }
        config.set(item.substr(0, eq), item.substr(eq + 1));
    }
}

bool overrides_key(const ModelOverrides &o, const std::string &key) {
    if (!o.file.empty()) {
        for (const auto &[k, v] : read_config_file(o.file)) {
            if (k == key) return true;
        }
    }
    for (const auto &item : o.set) {
        if (item.substr(0, item.find('=')) == key) return true;
    }
    return false;
}

void print_config(const std::string &title, const KeyValues &kv) {
    std::cout << "[" << title << "]\n" << format_key_values(kv);
}

std::vector<Camera> turntable(std::size_t views, double elevation, double radius, int width,
                              int height) {
    RigOptions rig;
    rig.width = width;
    rig.height = height;
    rig.ring_views = views;
    rig.high_views = 0;
    rig.ring_elevation_deg = elevation;
    rig.radius = radius;
    return default_camera_rig(rig);
}

Image to_image(const RenderOutput &r) {
    Image img;
    img.width = r.width;
    img.height = r.height;
    img.channels = 3;
    img.data = r.rgb;
    return img;
}

void render_views(const std::vector<Gaussian3D> &gaussians, const std::vector<Camera> &cams,
                  const Rgb &background, const fs::path &dir, const std::string &stem) {
    char name[64];
    for (std::size_t k = 0; k < cams.size(); ++k) {
        std::snprintf(name, sizeof(name), "%s_view_%02zu.ppm", stem.c_str(), k);
        write_pnm(dir / name, to_image(rasterize(gaussians, cams[k], background)));
    }
}

std::vector<LatentEntry> encode_dataset(const AtlasVAE &vae, const std::vector<DatasetRecord> &data) {
    NoGradGuard no_grad;
    std::vector<LatentEntry> out;
    for (const auto &rec : data) {
        LatentEntry e;
        e.id = rec.id;
        e.label = rec.label;
        e.latent = vae.encode(make_input(rec, vae.config())).mean;
        out.push_back(std::move(e));
    }
    return out;
}

std::vector<Gaussian3D> decode_latent(const AtlasVAE &vae, const Tensor &z0, std::size_t alpha) {
    NoGradGuard no_grad;
    const DecoderOutput dec = vae.decode(z0);
    return vae.decode_grid(dec, alpha).to_gaussians();
}

} // namespace

// -- datagen -------------------------------------------------------------------------

int run_datagen(const Common &common, const DatagenArgs &args) {
    if (args.shapes == 0) {
        throw UsageError("--shapes must be at least 1");
    }
    DatagenOptions o;
    o.seed = common.seed;
    o.shapes_per_kind = args.shapes;
    o.surface_points = args.points;
    o.teacher_gaussians = args.teacher;
    o.rig.width = args.width;
    o.rig.height = args.height;
    o.kinds.clear();
    if (args.classes.empty()) {
        o.kinds.assign(std::begin(kAllShapeKinds), std::end(kAllShapeKinds));
    } else {
        for (const auto &c : args.classes) {
            try {
                o.kinds.push_back(parse_shape_kind(c));
            } catch (const std::invalid_argument &e) {
                throw UsageError(std::string("--classes: ") + e.what());
            }
        }
    }
    ensure_dir(args.out);
    const auto records = generate_dataset(o);
    write_dataset(records, args.out);
    std::map<std::string, std::size_t> counts;
    for (const auto &r : records) ++counts[to_string(r.kind)];
    std::cout << "generated " << records.size() << " shapes in " << args.out.string() << "\n";
    for (const auto &[kind, n] : counts) std::cout << "  " << kind << ": " << n << "\n";
    std::cout << "views per shape: " << (records.empty() ? 0 : records[0].cameras.size())
              << ", points per shape: " << args.points << "\n";
    return kExitOk;
}

// -- train-vae ------------------------------------------------------------------------

int run_train_vae(const Common &common, const TrainVaeArgs &args) {
    if (args.stage != "1" && args.stage != "2" && args.stage != "all") {
        throw UsageError("--stage must be 1, 2 or all");
    }
    const fs::path last = args.out / "vae_last.atlg";
    const fs::path stage1 = args.out / "vae_stage1.atlg";

    fs::path resume_from;
    if (args.resume) {
        NamedTensors probe;
        bool last_is_stage2 = false;
        if (fs::exists(last)) {
            probe = load_tensors(last);
            last_is_stage2 = has_tensor(probe, "trainer/progress") &&
                             find_tensor(probe, "trainer/progress").values()[0] == 2.0;
        }
        if (args.stage == "2") {
            if (last_is_stage2) resume_from = last;
            else if (fs::exists(stage1)) resume_from = stage1;
            else {
                throw UsageError("--stage 2 --resume needs a stage-1 checkpoint, but " +
                                 stage1.string() + " does not exist");
            }
        } else {
            if (!fs::exists(last)) {
                throw UsageError("--resume: no checkpoint at " + last.string());
            }
            resume_from = last;
        }
    }

    VAEConfig config;
    VAEConfig stored;
    if (!resume_from.empty()) {
        stored = read_vae_config(load_tensors(resume_from));
        config = stored;
    } else if (!args.init.empty()) {
        require_file(args.init, "initial checkpoint");
        stored = read_vae_config(load_tensors(args.init));
    }
    apply_overrides(config, args.vae);
    config.validate();
    if (!resume_from.empty() || !args.init.empty()) {
        config.check_compatible(stored);
    }

    const auto data = read_dataset(args.data);
    ensure_dir(args.out);

    VaeTrainOptions to;
    to.stage1_steps = args.stage1_steps;
    to.stage2_steps = args.stage2_steps;
    to.lr = args.lr;
    to.seed = common.seed;
    to.checkpoint_every = args.checkpoint_every;
    to.out_dir = args.out;
    to.stop_after = args.stop_after;
    to.precision = common.precision == "f64" ? Precision::f64 : Precision::f32;

    AtlasVAE model(config, common.seed);
    if (!args.init.empty() && resume_from.empty()) {
        load_params(model.params(), load_tensors(args.init), "param/");
    }
    VaeTrainer trainer(model, data, to);
    if (!resume_from.empty()) {
        trainer.load_checkpoint(resume_from);
        std::cout << "resumed from " << resume_from.string() << " at stage " << trainer.stage()
                  << ", step " << trainer.stage_step() << "\n";
    }
    print_config("vae", model.config().to_key_values());
    std::cout << "parameters: " << model.params().count() << ", shapes: " << data.size() << "\n";

    trainer.on_epoch = [](const EpochMetrics &m) {
        std::printf("epoch %zu stage %d step %zu lr %.3g loss %.5f (center %.5f mu %.5f render %.5f kl %.3f)",
                    m.epoch, m.stage, m.step, m.lr, m.loss.total, m.loss.center, m.loss.mu,
                    m.loss.render, m.loss.kl);
        if (std::isfinite(m.psnr_heldout)) std::printf(" psnr_heldout %.2f", m.psnr_heldout);
        std::printf("\n");
        std::fflush(stdout);
    };

    const bool want1 = args.stage == "1" || args.stage == "all";
    const bool want2 = args.stage == "2" || args.stage == "all";
    if (want1 && trainer.stage() == 1) {
        if (!trainer.run_stage(1)) {
            std::cout << "stopped after " << args.stop_after << " steps; resume with --resume\n";
            return kExitOk;
        }
    }
    if (want2) {
        if (!trainer.run_stage(2)) {
            std::cout << "stopped after " << args.stop_after << " steps; resume with --resume\n";
            return kExitOk;
        }
    }
    std::printf("training-view PSNR %.2f dB, held-out PSNR %.2f dB\n", trainer.training_psnr(),
                trainer.heldout_psnr());
    std::cout << "checkpoint: " << last.string() << "\n";
    return kExitOk;
}

// -- train-ldm --------------------------------------------------------------------------

int run_train_ldm(const Common &common, const TrainLdmArgs &args) {
    require_file(args.vae, "VAE checkpoint");
    const AtlasVAE vae = load_vae(args.vae);
    ensure_dir(args.out);

    std::vector<LatentEntry> latents;
    if (!args.latents.empty()) {
        latents = load_latents(args.latents);
    } else {
        if (args.data.empty()) {
            throw UsageError("train-ldm needs --data or --latents");
        }
        latents = encode_dataset(vae, read_dataset(args.data));
        save_latents(args.out / "latents.atlg", latents);
        std::cout << "exported " << latents.size() << " latents to "
                  << (args.out / "latents.atlg").string() << "\n";
    }

    const fs::path last = args.out / "ldm_last.atlg";
    EDMConfig config;
    if (args.resume) {
        if (!fs::exists(last)) {
            throw UsageError("--resume: no checkpoint at " + last.string());
        }
        config = read_edm_config(load_tensors(last));
    } else {
        config.latent_tokens = vae.config().latent_tokens;
        config.latent_dim = vae.config().latent_dim;
        if (!overrides_key(args.ldm, "sigma_data")) {
            config.sigma_data = latent_std(latents);
        }
    }
    apply_overrides(config, args.ldm);
    config.validate();
    if (config.latent_tokens != vae.config().latent_tokens || config.latent_dim != vae.config().latent_dim) {
        throw ConfigError("field 'latent_tokens': denoiser latent shape does not match the VAE");
    }

    Denoiser model(config, common.seed);
    LdmTrainOptions to;
    to.steps = args.steps;
    to.lr = args.lr;
    to.batch = args.batch;
    to.seed = common.seed;
    to.precision = common.precision == "f64" ? Precision::f64 : Precision::f32;
    to.out_dir = args.out;
    LdmTrainer trainer(model, latents, to);
    if (args.resume) {
        trainer.load_checkpoint(last);
        std::cout << "resumed at step " << trainer.global_step() << "\n";
    }
    print_config("ldm", model.config().to_key_values());
    std::cout << "parameters: " << model.params().count() << ", latents: " << latents.size() << "\n";
    trainer.on_step = [&](const LdmStepMetrics &m) {
        if (m.step % 20 == 0 || m.step + 1 == args.steps) {
            std::printf("step %zu lr %.3g loss %.5f ema %.5f\n", m.step, m.lr, m.loss, m.loss_ema);
            std::fflush(stdout);
        }
    };
    trainer.run();
    std::cout << "checkpoint: " << last.string() << "\n";
    return kExitOk;
}

// -- generate -------------------------------------------------------------------------------

int run_generate(const Common &common, const GenerateArgs &args) {
    require_file(args.vae, "VAE checkpoint");
    require_file(args.ldm, "LDM checkpoint");
    const AtlasVAE vae = load_vae(args.vae);
    const Denoiser ldm = load_denoiser(args.ldm);
    const VAEConfig &vc = vae.config();
    if (ldm.config().latent_tokens != vc.latent_tokens || ldm.config().latent_dim != vc.latent_dim) {
        throw ConfigError("field 'latent_tokens': LDM and VAE checkpoints disagree on the latent shape");
    }
    const std::size_t loaded = vae.params().count() + ldm.params().count();
    std::cout << "parameters loaded: " << loaded << " (vae " << vae.params().count() << ", ldm "
              << ldm.params().count() << ")\n";

    const std::size_t alpha = args.alpha == 0 ? vc.grid : args.alpha;
    const int width = args.width > 0 ? args.width : vc.image_width;
    const int height = args.height > 0 ? args.height : vc.image_height;
    ensure_dir(args.out);
    const auto cams = turntable(args.views, args.elevation, 2.5, width, height);

    const auto latents = sample_batch(ldm, args.label, args.count, args.steps, common.seed);
    std::vector<LatentEntry> entries;
    const std::size_t expected = vc.patches * alpha * alpha;
    for (std::size_t i = 0; i < latents.size(); ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "sample_%03zu", i);
        const auto gaussians = decode_latent(vae, latents[i], alpha);
        if (gaussians.size() != expected) {
            throw std::logic_error("decoded Gaussian count does not match M * alpha^2");
        }
        write_splat_ply(args.out / (std::string(stem) + ".ply"), gaussians);
        render_views(gaussians, cams, vc.background, args.out, stem);
        entries.push_back({stem, args.label, latents[i]});
    }
    save_latents(args.out / "latents.atlg", entries);
    if (vae.params().count() + ldm.params().count() != loaded) {
        throw std::logic_error("parameter count changed during decoding");
    }
    std::cout << "alpha " << alpha << ": " << expected << " Gaussians per sample, " << latents.size()
              << " samples written to " << args.out.string() << "\n";
    std::cout << "parameters loaded: " << loaded << " (unchanged)\n";
    return kExitOk;
}

// -- render -----------------------------------------------------------------------------------

int run_render(const Common &, const RenderArgs &args) {
    require_file(args.ply, "splat PLY");
    const auto gaussians = read_splat_ply(args.ply);
    std::vector<Camera> cams;
    if (!args.cameras.empty()) {
        require_file(args.cameras, "camera file");
        cams = read_cameras(args.cameras);
    } else {
        cams = turntable(args.views, args.elevation, args.radius, args.width, args.height);
    }
    ensure_dir(args.out);
    render_views(gaussians, cams, kDefaultBackground, args.out, args.ply.stem().string());
    std::cout << "rendered " << cams.size() << " views of " << gaussians.size() << " Gaussians to "
              << args.out.string() << "\n";
    return kExitOk;
}

// -- export-ply ----------------------------------------------------------------------------------

int run_export_ply(const Common &, const ExportPlyArgs &args) {
    require_file(args.vae, "VAE checkpoint");
    const AtlasVAE vae = load_vae(args.vae);
    std::vector<LatentEntry> latents;
    if (!args.latents.empty()) {
        latents = load_latents(args.latents);
    } else if (!args.data.empty()) {
        latents = encode_dataset(vae, read_dataset(args.data));
    } else {
        throw UsageError("export-ply needs --data or --latents");
    }
    const std::size_t alpha = args.alpha == 0 ? vae.config().grid : args.alpha;
    ensure_dir(args.out);
    for (const auto &e : latents) {
        const auto gaussians = decode_latent(vae, e.latent, alpha);
        write_splat_ply(args.out / (e.id + ".ply"), gaussians);
        std::cout << e.id << ".ply: " << gaussians.size() << " Gaussians\n";
    }
    return kExitOk;
}

// -- eval ------------------------------------------------------------------------------------------

int run_eval(const Common &, const EvalArgs &args) {
    require_file(args.vae, "VAE checkpoint");
    const AtlasVAE vae = load_vae(args.vae);
    const auto data = read_dataset(args.data);
    const VAEConfig &c = vae.config();
    nlohmann::json shapes = nlohmann::json::array();
    double sum_cd = 0.0, sum_train = 0.0, sum_held = 0.0;
    std::size_t held_n = 0;
    std::printf("%-20s %12s %12s %10s %10s\n", "shape", "chamfer", "emd_centers", "psnr_train",
                "psnr_held");
    for (const auto &rec : data) {
        const ShapeInput input = make_input(rec, c);
        const ShapeTargets targets = make_targets(rec, c);
        double cd = 0.0, emd = 0.0;
        {
            NoGradGuard no_grad;
            const DecoderOutput dec = vae.decode(vae.encode(input).mean);
            const auto means = to_points(vae.decode_grid(dec, c.grid).means);
            cd = chamfer(means, rec.points.points);
            emd = emd_approx(to_points(dec.centers), to_points(targets.emd_targets.at(c.patches)));
        }
        const double pt = render_psnr(vae, input, targets, training_views(rec));
        const auto held = heldout_views(rec);
        const double ph = held.empty() ? std::nan("") : render_psnr(vae, input, targets, held);
        std::printf("%-20s %12.6f %12.6f %10.2f %10.2f\n", rec.id.c_str(), cd, emd, pt, ph);
        sum_cd += cd;
        sum_train += pt;
        if (!held.empty()) {
            sum_held += ph;
            ++held_n;
        }
        nlohmann::json s{{"id", rec.id}, {"chamfer", cd}, {"emd_centers", emd}, {"psnr_train", pt}};
        s["psnr_heldout"] = held.empty() ? nlohmann::json(nullptr) : nlohmann::json(ph);
        shapes.push_back(s);
    }
    const double n = static_cast<double>(data.size());
    nlohmann::json report{{"shapes", shapes},
                          {"mean_chamfer", sum_cd / n},
                          {"mean_psnr_train", sum_train / n}};
    report["mean_psnr_heldout"] =
        held_n == 0 ? nlohmann::json(nullptr) : nlohmann::json(sum_held / static_cast<double>(held_n));
    std::printf("mean chamfer %.6f, training-view PSNR %.2f dB\n", sum_cd / n, sum_train / n);
    if (!args.report.empty()) {
        std::ofstream os(args.report);
        if (!os) throw DataError(args.report.string() + ": cannot open for writing");
        os << report.dump(2) << "\n";
    }
    return kExitOk;
}

// -- check -------------------------------------------------------------------------------------------

int run_check(const Common &common, const CheckArgs &args) {
    CheckSuiteOptions o;
    o.seed = common.seed;
    o.gradient_instances = args.instances;
    o.inject_sign_error = args.inject_sign_error;
    const auto reports = run_check_suite(o);
    bool ok = true;
    for (const auto &r : reports) {
        std::printf("%-40s %-4s max_error %.3e threshold %.1e (%zu instances, %.2fs)\n",
                    r.name.c_str(), r.passed ? "PASS" : "FAIL", r.max_error, r.threshold,
                    r.instances, r.seconds);
        ok = ok && r.passed;
    }
    const std::string json = reports_to_json(reports);
    if (!args.report.empty()) {
        std::ofstream os(args.report);
        if (!os) throw DataError(args.report.string() + ": cannot open for writing");
        os << json << "\n";
    }
    std::cout << (ok ? "all checks passed" : "CHECK FAILURE") << "\n";
    return ok ? kExitOk : kExitCheck;
}

} // namespace atlasgs::cli
