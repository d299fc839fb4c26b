// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/diffusion.hpp"

#include "atlasgs/datagen.hpp"
#include "atlasgs/io_error.hpp"
#include "atlasgs/parallel.hpp"
#include "atlasgs/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace atlasgs {

namespace fs = std::filesystem;

// -- config ----------------------------------------------------------------------

void EDMConfig::validate() const {
    auto fail = [](const std::string &field, const std::string &why) {
        throw ConfigError("field '" + field + "': " + why);
    };
    if (!(sigma_data > 0.0)) fail("sigma_data", "must be positive");
    if (!(sigma_min > 0.0)) fail("sigma_min", "must be positive");
    if (!(sigma_max > sigma_min)) fail("sigma_max", "must exceed sigma_min");
    if (!(p_std > 0.0)) fail("p_std", "must be positive");
    if (!(rho > 0.0)) fail("rho", "must be positive");
    if (steps == 0) fail("steps", "must be at least 1");
    if (latent_tokens == 0) fail("latent_tokens", "must be positive");
    if (latent_dim == 0) fail("latent_dim", "must be positive");
    if (dim == 0) fail("dim", "must be positive");
    if (blocks == 0) fail("blocks", "must be at least 1");
    if (heads == 0 || dim % heads != 0) fail("heads", "must divide dim");
    if (ff_ratio == 0) fail("ff_ratio", "must be positive");
    if (condition == ConditionMode::class_label && classes == 0) {
        fail("classes", "must be positive for class conditioning");
    }
}

void EDMConfig::set(const std::string &key, const std::string &value) {
    if (key == "sigma_data") sigma_data = parse_double(key, value);
    else if (key == "sigma_min") sigma_min = parse_double(key, value);
    else if (key == "sigma_max") sigma_max = parse_double(key, value);
    else if (key == "p_mean") p_mean = parse_double(key, value);
    else if (key == "p_std") p_std = parse_double(key, value);
    else if (key == "rho") rho = parse_double(key, value);
    else if (key == "steps") steps = parse_size(key, value);
    else if (key == "latent_tokens") latent_tokens = parse_size(key, value);
    else if (key == "latent_dim") latent_dim = parse_size(key, value);
    else if (key == "dim") dim = parse_size(key, value);
    else if (key == "blocks") blocks = parse_size(key, value);
    else if (key == "heads") heads = parse_size(key, value);
    else if (key == "ff_ratio") ff_ratio = parse_size(key, value);
    else if (key == "noise_frequencies") noise_frequencies = parse_size(key, value);
    else if (key == "classes") classes = parse_size(key, value);
    else if (key == "condition") {
        if (value == "unconditional") condition = ConditionMode::unconditional;
        else if (value == "class") condition = ConditionMode::class_label;
        else throw ConfigError("field 'condition': expected unconditional or class, got '" + value + "'");
    } else {
        throw ConfigError("unknown diffusion config field '" + key + "'");
    }
}

KeyValues EDMConfig::to_key_values() const {
    return {{"sigma_data", format_double(sigma_data)},
            {"sigma_min", format_double(sigma_min)},
            {"sigma_max", format_double(sigma_max)},
            {"p_mean", format_double(p_mean)},
            {"p_std", format_double(p_std)},
            {"rho", format_double(rho)},
            {"steps", std::to_string(steps)},
            {"latent_tokens", std::to_string(latent_tokens)},
            {"latent_dim", std::to_string(latent_dim)},
            {"dim", std::to_string(dim)},
            {"blocks", std::to_string(blocks)},
            {"heads", std::to_string(heads)},
            {"ff_ratio", std::to_string(ff_ratio)},
            {"noise_frequencies", std::to_string(noise_frequencies)},
            {"condition", condition == ConditionMode::unconditional ? "unconditional" : "class"},
            {"classes", std::to_string(classes)}};
}

EDMConfig EDMConfig::from_key_values(const KeyValues &kv) {
    EDMConfig c;
    for (const auto &[k, v] : kv) c.set(k, v);
    return c;
}

// -- preconditioning -------------------------------------------------------------

Preconditioning precondition(double sigma, double sigma_data) {
    if (!(sigma > 0.0)) {
        throw std::invalid_argument("precondition: sigma must be positive");
    }
    if (!(sigma_data > 0.0)) {
        throw std::invalid_argument("precondition: sigma_data must be positive");
    }
    const double s2 = sigma * sigma + sigma_data * sigma_data;
    const double root = std::sqrt(s2);
    Preconditioning p;
    p.c_skip = sigma_data * sigma_data / s2;
    p.c_out = sigma * sigma_data / root;
    p.c_in = 1.0 / root;
    p.c_noise = 0.25 * std::log(sigma);
    return p;
}

double edm_weight(double sigma, double sigma_data) {
    const double sd = sigma * sigma_data;
    return (sigma * sigma + sigma_data * sigma_data) / (sd * sd);
}

// -- denoiser ----------------------------------------------------------------------

Denoiser::Denoiser(const EDMConfig &config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const EDMConfig &c = config_;
    Rng rng(seed);
    input_ = Linear(store_, "ldm.input", c.latent_dim, c.dim, rng);
    noise_embed_ = Mlp(store_, "ldm.noise", 1 + 2 * c.noise_frequencies, c.dim, c.dim, rng);
    for (std::size_t i = 0; i < c.blocks; ++i) {
        self_.emplace_back(store_, "ldm.self." + std::to_string(i), c.dim, c.heads, c.ff_ratio, rng);
        cross_.emplace_back(store_, "ldm.cross." + std::to_string(i), c.dim, c.heads, c.ff_ratio, rng);
    }
    output_ = Linear(store_, "ldm.output", c.dim, c.latent_dim, rng);
    // Zero output map: D starts as the skip path.
    for (auto &w : output_.weight.mutable_values()) w = 0.0;
    const std::size_t rows = c.condition == ConditionMode::class_label ? c.classes : 1;
    token_ = store_.add_uniform("ldm.condition", {rows, c.dim}, 0.5, rng);
}

Tensor Denoiser::condition_token(int label) const {
    if (config_.condition == ConditionMode::unconditional) {
        return token_;
    }
    if (label < 0 || static_cast<std::size_t>(label) >= config_.classes) {
        throw std::invalid_argument("denoise: class label " + std::to_string(label) +
                                    " out of range [0, " + std::to_string(config_.classes) + ")");
    }
    const std::size_t row = static_cast<std::size_t>(label);
    return slice_rows(token_, row, row + 1);
}

Tensor Denoiser::network(const Tensor &x, double c_noise, int label) const {
    const EDMConfig &c = config_;
    if (x.rank() != 2 || x.dim(1) != c.latent_dim) {
        throw ShapeError("denoise: expected [n, " + std::to_string(c.latent_dim) + "], got " +
                         shape_string(x.shape()));
    }
    const Tensor level = Tensor({1, 1}, std::vector<double>{c_noise});
    const Tensor emb = noise_embed_(concat_cols({level, sinusoidal_features(level, c.noise_frequencies)}));
    Tensor h = input_(x) + repeat_rows(emb, x.dim(0));
    const Tensor context = concat_rows({condition_token(label), emb});
    for (std::size_t i = 0; i < c.blocks; ++i) {
        h = self_attention(h, self_[i]);
        h = cross_attention(h, context, cross_[i]);
    }
    return output_(h);
}

Tensor Denoiser::denoise(const Tensor &z, double sigma, int label) const {
    const Preconditioning p = precondition(sigma, config_.sigma_data);
    return scale(z, p.c_skip) + scale(network(scale(z, p.c_in), p.c_noise, label), p.c_out);
}

Tensor ldm_loss(const Denoiser &model, const Tensor &z0, int label, Rng &rng) {
    const EDMConfig &c = model.config();
    const double sigma = std::exp(c.p_mean + c.p_std * rng.normal());
    std::vector<double> noise(z0.numel());
    for (auto &n : noise) n = sigma * rng.normal();
    const Tensor noisy = z0 + Tensor(z0.shape(), std::move(noise));
    const Tensor err = model.denoise(noisy, sigma, label) - z0;
    return scale(mean(square(err)), edm_weight(sigma, c.sigma_data));
}

// -- sampling -------------------------------------------------------------------------

std::vector<double> karras_sigmas(std::size_t steps, double sigma_min, double sigma_max, double rho) {
    if (steps == 0) {
        throw std::invalid_argument("karras_sigmas: steps must be at least 1");
    }
    std::vector<double> out;
    const double a = std::pow(sigma_max, 1.0 / rho);
    const double b = std::pow(sigma_min, 1.0 / rho);
    for (std::size_t i = 0; i < steps; ++i) {
        const double t = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
        out.push_back(std::pow(a + t * (b - a), rho));
    }
    out.push_back(0.0);
    return out;
}

Tensor sample_ode(const DenoiseFn &denoiser, const Shape &shape, std::size_t steps,
                  double sigma_min, double sigma_max, double rho, Rng &rng) {
    NoGradGuard no_grad;
    const auto sigmas = karras_sigmas(steps, sigma_min, sigma_max, rho);
    std::vector<double> init(shape_numel(shape));
    for (auto &v : init) v = sigma_max * rng.normal();
    Tensor z(shape, std::move(init));
    for (std::size_t i = 0; i < steps; ++i) {
        const double s = sigmas[i];
        const double next = sigmas[i + 1];
        const Tensor d = scale(z - denoiser(z, s), 1.0 / s);
        Tensor euler = z + scale(d, next - s);
        if (next > 0.0) {
            const Tensor d2 = scale(euler - denoiser(euler, next), 1.0 / next);
            z = z + scale(d + d2, 0.5 * (next - s));
        } else {
            z = euler;
        }
    }
    return z;
}

Tensor sample(const Denoiser &model, int label, std::size_t steps, Rng &rng) {
    const EDMConfig &c = model.config();
    return sample_ode([&](const Tensor &z, double sigma) { return model.denoise(z, sigma, label); },
                      {c.latent_tokens, c.latent_dim}, steps, c.sigma_min, c.sigma_max, c.rho, rng);
}

std::vector<Tensor> sample_batch(const Denoiser &model, int label, std::size_t count,
                                 std::size_t steps, std::uint64_t seed) {
    std::vector<Tensor> out(count);
    parallel_for(count, [&](std::size_t, std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            Rng rng(Rng::derive(seed, {i}));
            out[i] = sample(model, label, steps, rng);
        }
    });
    return out;
}

// -- latent datasets ------------------------------------------------------------------

void save_latents(const fs::path &path, const std::vector<LatentEntry> &latents) {
    NamedTensors t;
    for (const auto &e : latents) t.emplace_back(e.id, e.latent);
    save_tensors(path, t);
}

std::vector<LatentEntry> load_latents(const fs::path &path) {
    std::vector<LatentEntry> out;
    for (auto &[name, tensor] : load_tensors(path)) {
        if (tensor.rank() != 2) {
            throw DataError(path.string() + ": latent '" + name + "' is not a matrix");
        }
        LatentEntry e;
        e.id = name;
        e.latent = tensor;
        try {
            e.label = shape_label(parse_shape_kind(name.substr(0, name.find('_'))));
        } catch (const std::invalid_argument &) {
            e.label = 0;
        }
        out.push_back(std::move(e));
    }
    if (out.empty()) {
        throw DataError(path.string() + ": no latents");
    }
    return out;
}

double latent_std(const std::vector<LatentEntry> &latents) {
    double s = 0.0, s2 = 0.0;
    std::size_t n = 0;
    for (const auto &e : latents) {
        for (double v : e.latent.values()) {
            s += v;
            s2 += v * v;
            ++n;
        }
    }
    if (n == 0) return 0.0;
    const double m = s / static_cast<double>(n);
    return std::sqrt(std::max(0.0, s2 / static_cast<double>(n) - m * m));
}

// -- training ---------------------------------------------------------------------------

LdmTrainer::LdmTrainer(Denoiser &model, std::vector<LatentEntry> latents, LdmTrainOptions options)
    : model_(model), latents_(std::move(latents)), options_(std::move(options)),
      optimizer_(model.params(), options_.adamw) {
    if (latents_.empty()) {
        throw std::invalid_argument("LdmTrainer: empty latent set");
    }
    const EDMConfig &c = model_.config();
    for (const auto &e : latents_) {
        if (e.latent.rank() != 2 || e.latent.dim(0) != c.latent_tokens ||
            e.latent.dim(1) != c.latent_dim) {
            throw ConfigError("field 'latent_tokens': latent '" + e.id + "' has shape " +
                              shape_string(e.latent.shape()) + ", denoiser expects [" +
                              std::to_string(c.latent_tokens) + ", " +
                              std::to_string(c.latent_dim) + "]");
        }
    }
    if (options_.batch == 0) {
        throw std::invalid_argument("LdmTrainer: batch must be positive");
    }
}

LdmStepMetrics LdmTrainer::step() {
    PrecisionGuard precision_guard(options_.precision);
    const std::size_t batch = options_.batch;
    model_.params().zero_grad();
    Tensor total = Tensor::scalar(0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t idx = (step_ * batch + b) % latents_.size();
        Rng rng(Rng::derive(options_.seed, {step_, b}));
        total = total + ldm_loss(model_, latents_[idx].latent, latents_[idx].label, rng);
    }
    total = scale(total, 1.0 / static_cast<double>(batch));
    total.backward();
    OneCycle sched;
    sched.max_lr = options_.lr;
    sched.total_steps = options_.steps;
    sched.pct_start = options_.pct_start;
    LdmStepMetrics m;
    m.step = step_;
    m.lr = sched.lr(step_);
    m.loss = total.item();
    optimizer_.step(m.lr);
    ema_ = step_ == 0 ? m.loss : options_.ema_decay * ema_ + (1.0 - options_.ema_decay) * m.loss;
    m.loss_ema = ema_;
    ++step_;
    history_.push_back(m);
    append_metrics(m);
    if (on_step) on_step(m);
    return m;
}

void LdmTrainer::run() {
    while (step_ < options_.steps) {
        step();
        if (!options_.out_dir.empty() && options_.checkpoint_every > 0 &&
            step_ % options_.checkpoint_every == 0) {
            save_checkpoint(options_.out_dir / "ldm_last.atlg");
        }
    }
    if (!options_.out_dir.empty()) {
        save_checkpoint(options_.out_dir / "ldm_last.atlg");
    }
}

void LdmTrainer::append_metrics(const LdmStepMetrics &m) const {
    if (options_.out_dir.empty()) return;
    const fs::path path = options_.out_dir / "metrics_ldm.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) {
        throw DataError(path.string() + ": cannot open for writing");
    }
    if (fresh) os << kLdmMetricsHeader << '\n';
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%zu,%.6g,%.8g,%.8g", m.step, m.lr, m.loss, m.loss_ema);
    os << buf << '\n';
}

void LdmTrainer::save_checkpoint(const fs::path &path) const {
    NamedTensors extra = optimizer_.state();
    extra.emplace_back("trainer/progress",
                       Tensor({2}, std::vector<double>{static_cast<double>(step_), ema_}));
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    save_denoiser(path, model_, extra);
}

void LdmTrainer::load_checkpoint(const fs::path &path) {
    const NamedTensors tensors = load_tensors(path);
    load_params(model_.params(), tensors, "param/");
    optimizer_.load_state(tensors);
    const auto p = find_tensor(tensors, "trainer/progress").values();
    step_ = static_cast<std::size_t>(p[0]);
    ema_ = p[1];
}

void save_denoiser(const fs::path &path, const Denoiser &model, const NamedTensors &extra) {
    NamedTensors all = export_params(model.params(), "param/");
    all.emplace_back("meta/ldm_config", text_tensor(format_key_values(model.config().to_key_values())));
    all.insert(all.end(), extra.begin(), extra.end());
    save_tensors(path, all);
}

EDMConfig read_edm_config(const NamedTensors &tensors) {
    if (!has_tensor(tensors, "meta/ldm_config")) {
        throw CheckpointError("checkpoint has no diffusion config (not an LDM checkpoint?)");
    }
    return EDMConfig::from_key_values(
        parse_key_values(tensor_text(find_tensor(tensors, "meta/ldm_config")), "checkpoint"));
}

Denoiser load_denoiser(const fs::path &path) {
    const NamedTensors tensors = load_tensors(path);
    Denoiser model(read_edm_config(tensors), 0);
    load_params(model.params(), tensors, "param/");
    return model;
}

} // namespace atlasgs
