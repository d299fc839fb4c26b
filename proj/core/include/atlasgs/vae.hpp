// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0
//
// Shape VAE. The encoder turns a point cloud (and optionally a few RGB views)
// into a small latent set; the decoder expands the latent set into M atlas
// patches from which any number of 3D Gaussians can be decoded.
//
//   encode:   z = CrossAttn(PE(FPS(P)), PE(P)) [-> CrossAttn(., image tokens)]
//             -> SelfAttn -> linear head -> (mean, logvar)
//   upsample: z1 = SelfAttn(CrossAttn(y, W z0)), z2 = shuffle(MLP(z1)), z_l = SelfAttn(z2)
//   centers:  tanh(linear(SelfAttn(z_l)))
//   features: per branch, widen x4 and run local attention inside each patch,
//             adding the patch's row of z_l before every block.

#pragma once

#include "atlasgs/atlas.hpp"
#include "atlasgs/checkpoint.hpp"
#include "atlasgs/config.hpp"
#include "atlasgs/datagen.hpp"
#include "atlasgs/nn.hpp"
#include "atlasgs/optim.hpp"
#include "atlasgs/render.hpp"
#include "atlasgs/rng.hpp"
#include "atlasgs/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace atlasgs {

struct VAEConfig {
    std::size_t latent_tokens = 16; // n
    std::size_t dim = 64;           // d
    std::size_t latent_dim = 8;     // d0
    std::size_t patches = 64;       // M
    std::size_t corners = 4;        // beta (fixed)
    std::size_t grid = 4;           // alpha
    std::size_t heads = 4;
    std::size_t ff_ratio = 2;
    std::size_t frequencies = 8;
    std::size_t decoder_hidden = 64;

    std::size_t encoder_cross_blocks = 1;
    std::size_t encoder_self_blocks = 1;
    std::size_t image_blocks = 1;
    std::size_t upsample_blocks = 1;
    std::size_t center_blocks = 1;
    std::size_t patch_blocks = 2; // T

    std::size_t input_points = 2048;
    std::size_t input_views = 4; // 0 disables the image branch
    std::size_t image_patch = 8;

    std::size_t views = 4; // supervision views per step
    int image_width = 64;
    int image_height = 64;
    std::vector<std::size_t> sample_counts{1, 4};
    int stage = 1;
    double lambda_kl = 1e-4;
    double lambda_render_stage2 = 1.0;
    Rgb background = kDefaultBackground;

    CornerWeightMode weight_mode = CornerWeightMode::learned;
    bool two_branch = true;
    bool global_broadcast = true;
    bool local_attention = true;
    double initial_scale = 0.04;

    /// 0 in stage 1, lambda_render_stage2 in stage 2.
    double lambda_render() const { return stage == 2 ? lambda_render_stage2 : 0.0; }
    std::size_t tokens_per_latent() const { return patches / latent_tokens; }
    /// Throws ConfigError naming the offending field.
    void validate() const;

    /// Sets one field from text; throws ConfigError on unknown keys.
    void set(const std::string &key, const std::string &value);
    KeyValues to_key_values() const;
    static VAEConfig from_key_values(const KeyValues &kv);
    /// Architecture fields that must agree with a checkpoint; throws
    /// ConfigError listing the first mismatched field.
    void check_compatible(const VAEConfig &checkpoint) const;
};

/// Encoder input: points plus optional RGB views.
struct ShapeInput {
    std::vector<Vec3> points;
    std::vector<Image> images; // 3-channel, image_height x image_width
};

struct EncoderOutput {
    Tensor mean;   // [n, d0]
    Tensor logvar; // [n, d0], clamped to [-20, 8]
};

struct DecoderOutput {
    Tensor z_l;     // [M, d]
    Tensor centers; // [M, 3]
    Tensor geom;    // [M*4, d]
    Tensor app;     // [M*4, d]
};

inline constexpr double kMinLogvar = -20.0;
inline constexpr double kMaxLogvar = 8.0;

/// z0 = mean + exp(logvar / 2) * eps, eps ~ N(0, I).
Tensor reparameterize(const Tensor &mean, const Tensor &logvar, Rng &rng);

class AtlasVAE {
public:
    AtlasVAE(const VAEConfig &config, std::uint64_t seed);

    const VAEConfig &config() const { return config_; }
    VAEConfig &mutable_config() { return config_; }
    ParamStore &params() { return store_; }
    const ParamStore &params() const { return store_; }
    const AtlasDecoder &atlas() const { return atlas_; }

    EncoderOutput encode(const ShapeInput &input) const;
    Tensor upsample_latent(const Tensor &z0) const;
    Tensor decode_centers(const Tensor &z_l) const;
    /// (geometry, appearance) corner features, each [M*4, d]. In single-branch
    /// mode both entries are the same tensor.
    std::pair<Tensor, Tensor> decode_patch_features(const Tensor &z_l) const;
    DecoderOutput decode(const Tensor &z0) const;
    /// Gaussians at UV rows [M*S, 2].
    GaussianTensors decode_gaussians(const DecoderOutput &out, const Tensor &uv) const;
    /// alpha x alpha grid decode, M * alpha^2 Gaussians.
    GaussianTensors decode_grid(const DecoderOutput &out, std::size_t alpha) const;

    /// Image tokens [V' * tokens, d] (exposed for tests).
    Tensor image_tokens(const std::vector<Image> &images) const;

private:
    VAEConfig config_;
    ParamStore store_;

    FourierEncoder point_encoder_;
    std::vector<AttentionParams> enc_cross_;
    Linear patch_embed_;
    Tensor image_pos_;
    Tensor view_embed_;
    std::vector<AttentionParams> image_self_;
    AttentionParams image_cross_;
    std::vector<AttentionParams> enc_self_;
    Linear enc_head_;

    Linear latent_in_;
    Tensor query_;
    AttentionParams up_cross_;
    std::vector<AttentionParams> up_self1_;
    Mlp widen_;
    std::vector<AttentionParams> up_self2_;
    std::vector<AttentionParams> center_blocks_;
    Linear center_head_;

    struct FeatureBranch {
        Linear expand;
        std::vector<AttentionParams> blocks;
    };
    FeatureBranch geom_branch_;
    FeatureBranch app_branch_;
    Tensor run_branch(const FeatureBranch &branch, const Tensor &z_l) const;

    AtlasDecoder atlas_;
};

// -- data preparation --------------------------------------------------------

/// Per-shape supervision tensors.
struct ShapeTargets {
    Tensor points; // [P, 3] full ground-truth cloud
    /// FPS subsets keyed by size, used as equal-size EMD targets.
    std::map<std::size_t, Tensor> emd_targets;
    std::vector<Camera> cameras;
    std::vector<Tensor> rgb;   // [H, W, 3]
    std::vector<Tensor> alpha; // [H, W]
    std::vector<Tensor> depth; // [H, W], depth / far
};

ShapeTargets make_targets(const DatasetRecord &record, const VAEConfig &config);
/// FPS-selected `input_points` points and evenly spaced ring views.
ShapeInput make_input(const DatasetRecord &record, const VAEConfig &config);
/// Ring-view indices (all but the elevated ones) and held-out indices.
std::vector<std::size_t> training_views(const DatasetRecord &record);
std::vector<std::size_t> heldout_views(const DatasetRecord &record);

// -- loss ----------------------------------------------------------------------

/// Perceptual term on predicted and target [H, W, 3] images; returns a
/// scalar tensor.
using PerceptualHook = std::function<Tensor(const Tensor &pred, const Tensor &target)>;

struct LossOptions {
    /// Views rendered when the render term is active.
    std::vector<std::size_t> views;
    PerceptualHook perceptual;
    /// Evaluate the render term without gradient even when lambda_r = 0.
    bool log_render = false;
    /// Use the posterior mean instead of a reparameterized sample.
    bool use_mean = false;
};

struct LossParts {
    double total = 0.0;
    double center = 0.0;
    double mu = 0.0; // summed over sample counts
    double render = 0.0;
    double perceptual = 0.0;
    double kl = 0.0;
    std::vector<double> mu_by_count;
};

struct LossResult {
    Tensor total;
    LossParts parts;
};

/// L_center + sum_S L_mu(S) + lambda_r (L_render + L_perc) + lambda_KL L_KL.
LossResult vae_loss(const AtlasVAE &model, const ShapeInput &input, const ShapeTargets &targets,
                    Rng &rng, const LossOptions &options);

/// Mean PSNR (dB) of rgb renders from posterior-mean latents over `views`.
double render_psnr(const AtlasVAE &model, const ShapeInput &input, const ShapeTargets &targets,
                   const std::vector<std::size_t> &views);

// -- training --------------------------------------------------------------------

struct VaeTrainOptions {
    std::size_t stage1_steps = 1000;
    std::size_t stage2_steps = 1000;
    double lr = 2e-3;
    AdamWOptions adamw;
    double pct_start = 0.1;
    std::uint64_t seed = 0;
    /// Epochs between checkpoints; 0 writes only at stage ends.
    std::size_t checkpoint_every = 25;
    std::filesystem::path out_dir;
    /// Compute held-out PSNR every this many epochs (0: never).
    std::size_t psnr_every = 1;
    PerceptualHook perceptual;
    /// Stop a run_stage call after this many steps (0: no limit).
    std::size_t stop_after = 0;
    /// Arithmetic mode of optimizer steps; f64 is for gradient checking.
    Precision precision = Precision::f32;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    int stage = 1;
    std::size_t step = 0; // global optimizer step after the epoch
    double lr = 0.0;
    LossParts loss;       // averaged over the epoch
    double psnr_heldout = 0.0;
};

inline constexpr const char *kVaeMetricsHeader =
    "epoch,stage,step,lr,loss_total,loss_center,loss_mu,loss_render,loss_perceptual,loss_kl,"
    "psnr_heldout";

class TrainingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class VaeTrainer {
public:
    VaeTrainer(AtlasVAE &model, std::vector<DatasetRecord> data, VaeTrainOptions options);

    /// Runs stage `stage` until its step budget is exhausted (resumes where a
    /// loaded checkpoint stopped). Appends one metrics row per epoch. Returns
    /// false when `stop_after` interrupted the stage.
    bool run_stage(int stage);
    /// One optimizer step on shape `step % shapes`; returns its loss parts.
    LossParts step();

    void save_checkpoint(const std::filesystem::path &path) const;
    /// Restores parameters, optimizer state and progress counters.
    void load_checkpoint(const std::filesystem::path &path);

    /// Total loss over all shapes with a fixed evaluation seed (no update).
    LossParts evaluate(int stage) const;
    double training_psnr() const;
    double heldout_psnr() const;

    std::size_t global_step() const { return global_step_; }
    std::size_t stage_step() const { return stage_step_; }
    int stage() const { return stage_; }
    const std::vector<EpochMetrics> &history() const { return history_; }
    std::size_t shape_count() const { return inputs_.size(); }
    std::function<void(const EpochMetrics &)> on_epoch;

private:
    AtlasVAE &model_;
    std::vector<DatasetRecord> data_;
    std::vector<ShapeInput> inputs_;
    std::vector<ShapeTargets> targets_;
    VaeTrainOptions options_;
    AdamW optimizer_;
    int stage_ = 1;
    std::size_t stage_step_ = 0;
    std::size_t global_step_ = 0;
    std::size_t epoch_ = 0;
    std::vector<LossParts> epoch_parts_;
    std::vector<EpochMetrics> history_;

    std::size_t stage_budget(int stage) const;
    void finish_epoch();
    void append_metrics(const EpochMetrics &m) const;
    void dump_diagnostic(const std::string &reason) const;
};

/// Saves model parameters plus config text in one checkpoint file.
void save_vae(const std::filesystem::path &path, const AtlasVAE &model,
              const NamedTensors &extra = {});
/// Rebuilds a model from a checkpoint written by save_vae.
AtlasVAE load_vae(const std::filesystem::path &path);
VAEConfig read_vae_config(const NamedTensors &tensors);

/// Stores text as a rank-1 tensor of byte values.
Tensor text_tensor(const std::string &text);
std::string tensor_text(const Tensor &t);

} // namespace atlasgs
