// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace atlasgs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitCheck = 3;

/// Thrown for invalid flag combinations detected after parsing.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::uint64_t seed = 0;
    std::size_t threads = 1;
    /// Training arithmetic, f32 or f64.
    std::string precision = "f32";
    std::filesystem::path config;
};

struct DatagenArgs {
    std::filesystem::path out;
    std::size_t shapes = 4;
    std::vector<std::string> classes;
    std::size_t points = 2048;
    std::size_t teacher = 4096;
    int width = 64;
    int height = 64;
};

struct ModelOverrides {
    std::filesystem::path file;
    std::vector<std::string> set;
};

struct TrainVaeArgs {
    std::filesystem::path data;
    std::filesystem::path out;
    std::string stage = "all";
    std::size_t stage1_steps = 1000;
    std::size_t stage2_steps = 1000;
    double lr = 2e-3;
    std::size_t checkpoint_every = 25;
    std::size_t stop_after = 0;
    bool resume = false;
    std::filesystem::path init;
    ModelOverrides vae;
};

struct TrainLdmArgs {
    std::filesystem::path vae;
    std::filesystem::path data;
    std::filesystem::path latents;
    std::filesystem::path out;
    std::size_t steps = 200;
    double lr = 1e-2;
    std::size_t batch = 64;
    bool resume = false;
    ModelOverrides ldm;
};

struct GenerateArgs {
    std::filesystem::path vae;
    std::filesystem::path ldm;
    std::filesystem::path out;
    std::size_t count = 1;
    std::size_t alpha = 0; // 0: the VAE's configured grid
    std::size_t steps = 40;
    int label = 0;
    std::size_t views = 8;
    double elevation = 20.0;
    int width = 0; // 0: the VAE's image size
    int height = 0;
};

struct RenderArgs {
    std::filesystem::path ply;
    std::filesystem::path cameras;
    std::filesystem::path out;
    std::size_t views = 8;
    double elevation = 20.0;
    double radius = 2.5;
    int width = 128;
    int height = 128;
};

struct ExportPlyArgs {
    std::filesystem::path vae;
    std::filesystem::path data;
    std::filesystem::path latents;
    std::filesystem::path out;
    std::size_t alpha = 0;
};

struct EvalArgs {
    std::filesystem::path vae;
    std::filesystem::path data;
    std::filesystem::path report;
};

struct CheckArgs {
    std::filesystem::path report;
    std::size_t instances = 20;
    bool inject_sign_error = false;
};

int run_datagen(const Common &common, const DatagenArgs &args);
int run_train_vae(const Common &common, const TrainVaeArgs &args);
int run_train_ldm(const Common &common, const TrainLdmArgs &args);
int run_generate(const Common &common, const GenerateArgs &args);
int run_render(const Common &common, const RenderArgs &args);
int run_export_ply(const Common &common, const ExportPlyArgs &args);
int run_eval(const Common &common, const EvalArgs &args);
int run_check(const Common &common, const CheckArgs &args);

} // namespace atlasgs::cli
