// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// atlasgs: data generation, training, sampling and verification.
//
// Precedence: command-line flags > --config file (TOML/INI) > ATLASG_* env > defaults.

#include "commands.hpp"

#include "atlasgs/checkpoint.hpp"
#include "atlasgs/config.hpp"
#include "atlasgs/io_error.hpp"
#include "atlasgs/parallel.hpp"
#include "atlasgs/vae.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cctype>
#include <iostream>

namespace {

using namespace atlasgs::cli;

std::string env_name(const std::string &flag) {
    std::string out = "ATLASG_";
    for (char c : flag) {
        out.push_back(c == '-' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
    }
    return out;
}

/// Gives every long option an ATLASG_<NAME> environment fallback.
void attach_env(CLI::App &app) {
    for (CLI::Option *opt : app.get_options()) {
        const auto &names = opt->get_lnames();
        if (names.empty() || names[0] == "help" || names[0] == "config") continue;
        if (opt->get_envname().empty()) opt->envname(env_name(names[0]));
    }
    for (CLI::App *sub : app.get_subcommands({})) attach_env(*sub);
}

void add_model_overrides(CLI::App *cmd, ModelOverrides &o, const std::string &prefix) {
    cmd->add_option("--" + prefix + "-config", o.file, "key = value file with " + prefix + " settings");
    cmd->add_option("--" + prefix + "-set", o.set, "override one " + prefix + " setting (key=value)")
        ->take_all();
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"atlasgs: patch-based 3D Gaussian VAE and latent diffusion"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_config("--config", "", "TOML/INI file with flag values (flags win)");

    Common common;
    app.add_option("--seed", common.seed, "random seed")->capture_default_str();
    app.add_option("--threads", common.threads, "worker threads")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    app.add_option("--precision", common.precision, "training arithmetic")
        ->check(CLI::IsMember({"f32", "f64"}))
        ->capture_default_str();

    DatagenArgs dg;
    auto *datagen = app.add_subcommand("datagen", "generate a synthetic shape dataset");
    datagen->add_option("--out", dg.out, "output directory")->required();
    datagen->add_option("--shapes", dg.shapes, "shapes per class")
        ->check(CLI::Range(std::size_t{1}, std::size_t{100000}))
        ->capture_default_str();
    datagen->add_option("--classes", dg.classes, "comma-separated kinds (sphere,box,torus,superquadric)")
        ->delimiter(',');
    datagen->add_option("--points", dg.points, "surface points per shape")->capture_default_str();
    datagen->add_option("--teacher", dg.teacher, "teacher Gaussians per shape")->capture_default_str();
    datagen->add_option("--width", dg.width, "view width")->capture_default_str();
    datagen->add_option("--height", dg.height, "view height")->capture_default_str();

    TrainVaeArgs tv;
    auto *train_vae = app.add_subcommand("train-vae", "train the VAE (two stages)");
    train_vae->add_option("--data", tv.data, "dataset directory")->required();
    train_vae->add_option("--out", tv.out, "run directory")->required();
    train_vae->add_option("--stage", tv.stage, "1, 2 or all")->capture_default_str();
    train_vae->add_option("--stage1-steps", tv.stage1_steps)->capture_default_str();
    train_vae->add_option("--stage2-steps", tv.stage2_steps)->capture_default_str();
    train_vae->add_option("--lr", tv.lr, "peak learning rate")->capture_default_str();
    train_vae->add_option("--checkpoint-every", tv.checkpoint_every, "epochs between checkpoints")
        ->capture_default_str();
    train_vae->add_option("--stop-after", tv.stop_after, "stop after this many steps (0: never)")
        ->capture_default_str();
    train_vae->add_flag("--resume", tv.resume, "continue from the run directory's checkpoint");
    train_vae->add_option("--init", tv.init, "initialize parameters from a checkpoint");
    add_model_overrides(train_vae, tv.vae, "vae");

    TrainLdmArgs tl;
    auto *train_ldm = app.add_subcommand("train-ldm", "export latents and train the latent diffusion model");
    train_ldm->add_option("--vae", tl.vae, "VAE checkpoint")->required();
    train_ldm->add_option("--data", tl.data, "dataset directory");
    train_ldm->add_option("--latents", tl.latents, "precomputed latent file");
    train_ldm->add_option("--out", tl.out, "run directory")->required();
    train_ldm->add_option("--steps", tl.steps)->capture_default_str();
    train_ldm->add_option("--lr", tl.lr)->capture_default_str();
    train_ldm->add_option("--batch", tl.batch, "latents per step")->capture_default_str();
    train_ldm->add_flag("--resume", tl.resume, "continue from ldm_last.atlg");
    add_model_overrides(train_ldm, tl.ldm, "ldm");

    GenerateArgs gen;
    auto *generate = app.add_subcommand("generate", "sample latents and decode Gaussians");
    generate->add_option("--vae", gen.vae, "VAE checkpoint")->required();
    generate->add_option("--ldm", gen.ldm, "LDM checkpoint")->required();
    generate->add_option("--out", gen.out, "output directory")->required();
    generate->add_option("--count", gen.count, "samples")->capture_default_str();
    generate->add_option("--alpha", gen.alpha, "UV grid side (0: VAE default)")->capture_default_str();
    generate->add_option("--steps", gen.steps, "denoising steps")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    generate->add_option("--label", gen.label, "class label for class-conditioned models")
        ->capture_default_str();
    generate->add_option("--views", gen.views, "turntable views")->capture_default_str();
    generate->add_option("--elevation", gen.elevation, "turntable elevation (degrees)")
        ->capture_default_str();
    generate->add_option("--width", gen.width, "render width (0: VAE size)")->capture_default_str();
    generate->add_option("--height", gen.height, "render height (0: VAE size)")->capture_default_str();

    RenderArgs rd;
    auto *render = app.add_subcommand("render", "render a splat PLY");
    render->add_option("--ply", rd.ply, "splat PLY file")->required();
    render->add_option("--out", rd.out, "output directory")->required();
    render->add_option("--cameras", rd.cameras, "camera JSON (default: turntable)");
    render->add_option("--views", rd.views)->capture_default_str();
    render->add_option("--elevation", rd.elevation)->capture_default_str();
    render->add_option("--radius", rd.radius)->capture_default_str();
    render->add_option("--width", rd.width)->capture_default_str();
    render->add_option("--height", rd.height)->capture_default_str();

    ExportPlyArgs ep;
    auto *export_ply = app.add_subcommand("export-ply", "decode latents or dataset shapes to splat PLY");
    export_ply->add_option("--vae", ep.vae, "VAE checkpoint")->required();
    export_ply->add_option("--data", ep.data, "dataset to encode");
    export_ply->add_option("--latents", ep.latents, "latent file");
    export_ply->add_option("--out", ep.out, "output directory")->required();
    export_ply->add_option("--alpha", ep.alpha, "UV grid side (0: VAE default)")->capture_default_str();

    EvalArgs ev;
    auto *eval = app.add_subcommand("eval", "reconstruction metrics on a dataset");
    eval->add_option("--vae", ev.vae, "VAE checkpoint")->required();
    eval->add_option("--data", ev.data, "dataset directory")->required();
    eval->add_option("--report", ev.report, "JSON report path");

    CheckArgs ck;
    auto *check = app.add_subcommand("check", "run the self-verification suite");
    check->add_option("--report", ck.report, "JSON report path");
    check->add_option("--instances", ck.instances, "random instances per gradient check")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    check->add_flag("--inject-sign-error", ck.inject_sign_error, "negative control: flip analytic gradients");

    attach_env(app);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        atlasgs::set_thread_count(common.threads);
        std::cout << "[effective config]\nseed=" << common.seed << "\nthreads=" << common.threads
                  << "\nprecision=" << common.precision << "\n";
        for (const CLI::App *sub : app.get_subcommands()) {
            std::cout << "[" << sub->get_name() << "]\n" << sub->config_to_str(true, false);
        }
        std::cout.flush();
        if (*datagen) return run_datagen(common, dg);
        if (*train_vae) return run_train_vae(common, tv);
        if (*train_ldm) return run_train_ldm(common, tl);
        if (*generate) return run_generate(common, gen);
        if (*render) return run_render(common, rd);
        if (*export_ply) return run_export_ply(common, ep);
        if (*eval) return run_eval(common, ev);
        if (*check) return run_check(common, ck);
    } catch (const UsageError &e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const atlasgs::ConfigError &e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const atlasgs::DataError &e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const atlasgs::CheckpointError &e) {
        std::cerr << "checkpoint error: " << e.what() << "\n";
        return kExitData;
    } catch (const atlasgs::TrainingError &e) {
        std::cerr << "training error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
