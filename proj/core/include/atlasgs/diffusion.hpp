// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// EDM latent diffusion over VAE latent sets [n, d0].
//
//   D(z; sigma, C) = c_skip z + c_out F(c_in z; c_noise, C)
//   F: linear d0 -> d, l x (self-attention, cross-attention to C), linear d -> d0,
//      with a c_noise embedding added to every token before the blocks.
//   C: the condition token followed by the c_noise embedding token.

#pragma once

#include "atlasgs/checkpoint.hpp"
#include "atlasgs/config.hpp"
#include "atlasgs/nn.hpp"
#include "atlasgs/optim.hpp"
#include "atlasgs/rng.hpp"
#include "atlasgs/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace atlasgs {

enum class ConditionMode { unconditional, class_label };

struct EDMConfig {
    double sigma_data = 0.5;
    double sigma_min = 0.002;
    double sigma_max = 80.0;
    double p_mean = -1.2; // log-normal training noise
    double p_std = 1.2;
    double rho = 7.0;
    std::size_t steps = 40;

    std::size_t latent_tokens = 16; // n
    std::size_t latent_dim = 8;     // d0
    std::size_t dim = 64;
    std::size_t blocks = 2; // l
    std::size_t heads = 4;
    std::size_t ff_ratio = 2;
    std::size_t noise_frequencies = 6;

    ConditionMode condition = ConditionMode::unconditional;
    std::size_t classes = 4;

    void validate() const;
    void set(const std::string &key, const std::string &value);
    KeyValues to_key_values() const;
    static EDMConfig from_key_values(const KeyValues &kv);
};

struct Preconditioning {
    double c_skip = 0.0;
    double c_out = 0.0;
    double c_in = 0.0;
    double c_noise = 0.0;
};

/// Throws std::invalid_argument for sigma <= 0 or sigma_data <= 0.
Preconditioning precondition(double sigma, double sigma_data);
/// lambda(sigma) = (sigma^2 + sigma_data^2) / (sigma sigma_data)^2.
double edm_weight(double sigma, double sigma_data);

class Denoiser {
public:
    Denoiser(const EDMConfig &config, std::uint64_t seed);

    const EDMConfig &config() const { return config_; }
    EDMConfig &mutable_config() { return config_; }
    ParamStore &params() { return store_; }
    const ParamStore &params() const { return store_; }

    /// F(x; c_noise, C). `label` is ignored in unconditional mode.
    Tensor network(const Tensor &x, double c_noise, int label = 0) const;
    /// Preconditioned denoiser D(z; sigma, C).
    Tensor denoise(const Tensor &z, double sigma, int label = 0) const;
    /// Condition token [1, d].
    Tensor condition_token(int label) const;

private:
    EDMConfig config_;
    ParamStore store_;
    Linear input_;
    Mlp noise_embed_;
    std::vector<AttentionParams> self_;
    std::vector<AttentionParams> cross_;
    Linear output_;
    Tensor token_;
};

/// lambda(sigma) || D(z0 + sigma eps; sigma) - z0 ||^2 averaged over entries,
/// sigma = exp(p_mean + p_std * N(0,1)).
Tensor ldm_loss(const Denoiser &model, const Tensor &z0, int label, Rng &rng);

/// Karras schedule: `steps` decreasing levels from sigma_max to sigma_min
/// followed by a terminal 0.
std::vector<double> karras_sigmas(std::size_t steps, double sigma_min, double sigma_max,
                                  double rho);

using DenoiseFn = std::function<Tensor(const Tensor &z, double sigma)>;

/// Heun integration of dz/dsigma = (z - D(z; sigma)) / sigma from
/// z ~ N(0, sigma_max^2 I); the last interval (to sigma = 0) is an Euler step.
Tensor sample_ode(const DenoiseFn &denoiser, const Shape &shape, std::size_t steps,
                  double sigma_min, double sigma_max, double rho, Rng &rng);
/// One latent from the trained model.
Tensor sample(const Denoiser &model, int label, std::size_t steps, Rng &rng);
/// `count` latents; sample i uses the stream Rng::derive(seed, {i}).
std::vector<Tensor> sample_batch(const Denoiser &model, int label, std::size_t count,
                                 std::size_t steps, std::uint64_t seed);

// -- latent datasets ------------------------------------------------------------

struct LatentEntry {
    std::string id;
    int label = 0;
    Tensor latent; // [n, d0]
};

/// One tensor per shape named by its id.
void save_latents(const std::filesystem::path &path, const std::vector<LatentEntry> &latents);
/// Labels are recovered from the id prefix (`<kind>_...`), 0 when unknown.
std::vector<LatentEntry> load_latents(const std::filesystem::path &path);
/// Population standard deviation over all latent entries.
double latent_std(const std::vector<LatentEntry> &latents);

// -- training -------------------------------------------------------------------

struct LdmTrainOptions {
    std::size_t steps = 200;
    double lr = 1e-2;
    double pct_start = 0.05;
    /// Latents per step (cycled in order).
    std::size_t batch = 64;
    AdamWOptions adamw;
    std::uint64_t seed = 0;
    std::filesystem::path out_dir;
    std::size_t checkpoint_every = 100;
    double ema_decay = 0.9;
    Precision precision = Precision::f32;
};

inline constexpr const char *kLdmMetricsHeader = "step,lr,loss,loss_ema";

struct LdmStepMetrics {
    std::size_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
    double loss_ema = 0.0;
};

class LdmTrainer {
public:
    LdmTrainer(Denoiser &model, std::vector<LatentEntry> latents, LdmTrainOptions options);

    /// Runs until `steps` optimizer steps have been taken in total.
    void run();
    LdmStepMetrics step();

    void save_checkpoint(const std::filesystem::path &path) const;
    void load_checkpoint(const std::filesystem::path &path);

    std::size_t global_step() const { return step_; }
    const std::vector<LdmStepMetrics> &history() const { return history_; }
    std::function<void(const LdmStepMetrics &)> on_step;

private:
    Denoiser &model_;
    std::vector<LatentEntry> latents_;
    LdmTrainOptions options_;
    AdamW optimizer_;
    std::size_t step_ = 0;
    double ema_ = 0.0;
    std::vector<LdmStepMetrics> history_;

    void append_metrics(const LdmStepMetrics &m) const;
};

void save_denoiser(const std::filesystem::path &path, const Denoiser &model,
                   const NamedTensors &extra = {});
Denoiser load_denoiser(const std::filesystem::path &path);
EDMConfig read_edm_config(const NamedTensors &tensors);

} // namespace atlasgs
