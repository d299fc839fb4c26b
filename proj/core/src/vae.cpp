// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/vae.hpp"

#include "atlasgs/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>

namespace atlasgs {

namespace fs = std::filesystem;

// -- config ----------------------------------------------------------------------

namespace {

std::string weight_mode_name(CornerWeightMode m) {
    return m == CornerWeightMode::learned ? "learned" : "bilinear";
}

} // namespace

void VAEConfig::validate() const {
    auto fail = [](const std::string &field, const std::string &why) {
        throw ConfigError("field '" + field + "': " + why);
    };
    if (latent_tokens == 0) fail("latent_tokens", "must be positive");
    if (dim == 0) fail("dim", "must be positive");
    if (latent_dim == 0) fail("latent_dim", "must be positive");
    if (heads == 0 || dim % heads != 0) fail("heads", "must divide dim");
    if (patches == 0 || patches % latent_tokens != 0) {
        fail("patches", "must be a positive multiple of latent_tokens");
    }
    if (corners != kCorners) fail("corners", "must be 4");
    if (grid == 0) fail("grid", "must be at least 1");
    if (frequencies == 0) fail("frequencies", "must be positive");
    if (ff_ratio == 0) fail("ff_ratio", "must be positive");
    if (decoder_hidden == 0) fail("decoder_hidden", "must be positive");
    if (input_points < latent_tokens) fail("input_points", "must be at least latent_tokens");
    if (input_views > 0) {
        if (image_patch == 0) fail("image_patch", "must be positive");
        if (image_width % static_cast<int>(image_patch) != 0) {
            fail("image_width", "must be divisible by image_patch");
        }
        if (image_height % static_cast<int>(image_patch) != 0) {
            fail("image_height", "must be divisible by image_patch");
        }
    }
    if (image_width <= 0) fail("image_width", "must be positive");
    if (image_height <= 0) fail("image_height", "must be positive");
    if (views == 0) fail("views", "must be positive");
    if (sample_counts.empty()) fail("sample_counts", "must list at least one count");
    for (auto s : sample_counts) {
        if (s == 0) fail("sample_counts", "counts must be positive");
    }
    if (stage != 1 && stage != 2) fail("stage", "must be 1 or 2");
    if (!(lambda_kl >= 0.0)) fail("lambda_kl", "must be non-negative");
    if (!(lambda_render_stage2 >= 0.0)) fail("lambda_render_stage2", "must be non-negative");
    if (!(initial_scale > 0.0 && initial_scale <= kMaxScale)) {
        fail("initial_scale", "must be in (0, 1]");
    }
    for (double c : background) {
        if (!(c >= 0.0 && c <= 1.0)) fail("background", "components must be in [0, 1]");
    }
}

void VAEConfig::set(const std::string &key, const std::string &value) {
    if (key == "latent_tokens") latent_tokens = parse_size(key, value);
    else if (key == "dim") dim = parse_size(key, value);
    else if (key == "latent_dim") latent_dim = parse_size(key, value);
    else if (key == "patches") patches = parse_size(key, value);
    else if (key == "corners") corners = parse_size(key, value);
    else if (key == "grid" || key == "alpha") grid = parse_size(key, value);
    else if (key == "heads") heads = parse_size(key, value);
    else if (key == "ff_ratio") ff_ratio = parse_size(key, value);
    else if (key == "frequencies") frequencies = parse_size(key, value);
    else if (key == "decoder_hidden") decoder_hidden = parse_size(key, value);
    else if (key == "encoder_cross_blocks") encoder_cross_blocks = parse_size(key, value);
    else if (key == "encoder_self_blocks") encoder_self_blocks = parse_size(key, value);
    else if (key == "image_blocks") image_blocks = parse_size(key, value);
    else if (key == "upsample_blocks") upsample_blocks = parse_size(key, value);
    else if (key == "center_blocks") center_blocks = parse_size(key, value);
    else if (key == "patch_blocks") patch_blocks = parse_size(key, value);
    else if (key == "input_points") input_points = parse_size(key, value);
    else if (key == "input_views") input_views = parse_size(key, value);
    else if (key == "image_patch") image_patch = parse_size(key, value);
    else if (key == "views") views = parse_size(key, value);
    else if (key == "image_width") image_width = static_cast<int>(parse_int(key, value));
    else if (key == "image_height") image_height = static_cast<int>(parse_int(key, value));
    else if (key == "sample_counts") sample_counts = parse_size_list(key, value);
    else if (key == "stage") stage = static_cast<int>(parse_int(key, value));
    else if (key == "lambda_kl") lambda_kl = parse_double(key, value);
    else if (key == "lambda_render_stage2") lambda_render_stage2 = parse_double(key, value);
    else if (key == "background") {
        std::stringstream ss(value);
        std::string item;
        std::vector<double> v;
        while (std::getline(ss, item, ',')) v.push_back(parse_double(key, item));
        if (v.size() != 3) throw ConfigError("field 'background': expected r,g,b");
        background = {v[0], v[1], v[2]};
    } else if (key == "weight_mode") {
        if (value == "learned") weight_mode = CornerWeightMode::learned;
        else if (value == "bilinear") weight_mode = CornerWeightMode::bilinear;
        else throw ConfigError("field 'weight_mode': expected learned or bilinear, got '" + value + "'");
    } else if (key == "two_branch") two_branch = parse_bool(key, value);
    else if (key == "global_broadcast") global_broadcast = parse_bool(key, value);
    else if (key == "local_attention") local_attention = parse_bool(key, value);
    else if (key == "initial_scale") initial_scale = parse_double(key, value);
    else throw ConfigError("unknown VAE config field '" + key + "'");
}

KeyValues VAEConfig::to_key_values() const {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {{"latent_tokens", std::to_string(latent_tokens)},
            {"dim", std::to_string(dim)},
            {"latent_dim", std::to_string(latent_dim)},
            {"patches", std::to_string(patches)},
            {"corners", std::to_string(corners)},
            {"grid", std::to_string(grid)},
            {"heads", std::to_string(heads)},
            {"ff_ratio", std::to_string(ff_ratio)},
            {"frequencies", std::to_string(frequencies)},
            {"decoder_hidden", std::to_string(decoder_hidden)},
            {"encoder_cross_blocks", std::to_string(encoder_cross_blocks)},
            {"encoder_self_blocks", std::to_string(encoder_self_blocks)},
            {"image_blocks", std::to_string(image_blocks)},
            {"upsample_blocks", std::to_string(upsample_blocks)},
            {"center_blocks", std::to_string(center_blocks)},
            {"patch_blocks", std::to_string(patch_blocks)},
            {"input_points", std::to_string(input_points)},
            {"input_views", std::to_string(input_views)},
            {"image_patch", std::to_string(image_patch)},
            {"views", std::to_string(views)},
            {"image_width", std::to_string(image_width)},
            {"image_height", std::to_string(image_height)},
            {"sample_counts", format_size_list(sample_counts)},
            {"stage", std::to_string(stage)},
            {"lambda_kl", format_double(lambda_kl)},
            {"lambda_render_stage2", format_double(lambda_render_stage2)},
            {"background", format_double(background[0]) + "," + format_double(background[1]) +
                               "," + format_double(background[2])},
            {"weight_mode", weight_mode_name(weight_mode)},
            {"two_branch", b(two_branch)},
            {"global_broadcast", b(global_broadcast)},
            {"local_attention", b(local_attention)},
            {"initial_scale", format_double(initial_scale)}};
}

VAEConfig VAEConfig::from_key_values(const KeyValues &kv) {
    VAEConfig c;
    for (const auto &[k, v] : kv) c.set(k, v);
    return c;
}

void VAEConfig::check_compatible(const VAEConfig &ckpt) const {
    const auto mine = to_key_values();
    const auto theirs = ckpt.to_key_values();
    static const char *arch[] = {"latent_tokens", "dim", "latent_dim", "patches", "heads",
                                 "ff_ratio", "frequencies", "decoder_hidden",
                                 "encoder_cross_blocks", "encoder_self_blocks", "image_blocks",
                                 "upsample_blocks", "center_blocks", "patch_blocks",
                                 "input_views", "image_patch", "image_width", "image_height",
                                 "two_branch"};
    for (const char *key : arch) {
        auto find = [&](const KeyValues &kv) {
            for (const auto &[k, v] : kv) {
                if (k == key) return v;
            }
            return std::string();
        };
        const std::string a = find(mine), b = find(theirs);
        if (a != b) {
            throw ConfigError("field '" + std::string(key) + "': checkpoint has " + b +
                              ", config has " + a);
        }
    }
}

// -- model -----------------------------------------------------------------------

Tensor reparameterize(const Tensor &mean, const Tensor &logvar, Rng &rng) {
    if (mean.shape() != logvar.shape()) {
        throw ShapeError("reparameterize: mean " + shape_string(mean.shape()) + " vs logvar " +
                         shape_string(logvar.shape()));
    }
    std::vector<double> eps(mean.numel());
    for (auto &e : eps) e = rng.normal();
    return mean + exp(scale(logvar, 0.5)) * Tensor(mean.shape(), std::move(eps));
}

namespace {

std::vector<AttentionParams> make_blocks(ParamStore &store, const std::string &name,
                                         std::size_t count, const VAEConfig &c, Rng &rng) {
    std::vector<AttentionParams> out;
    for (std::size_t i = 0; i < count; ++i) {
        out.emplace_back(store, name + "." + std::to_string(i), c.dim, c.heads, c.ff_ratio, rng);
    }
    return out;
}

} // namespace

AtlasVAE::AtlasVAE(const VAEConfig &config, std::uint64_t seed) : config_(config) {
    config_.validate();
    const VAEConfig &c = config_;
    Rng rng(seed);
    const std::size_t d = c.dim;

    point_encoder_ = FourierEncoder(store_, "enc.points", 3, c.frequencies, d, rng);
    enc_cross_ = make_blocks(store_, "enc.cross", c.encoder_cross_blocks, c, rng);
    if (c.input_views > 0) {
        const std::size_t p = c.image_patch;
        const std::size_t tokens = static_cast<std::size_t>(c.image_width / static_cast<int>(p)) *
                                   static_cast<std::size_t>(c.image_height / static_cast<int>(p));
        patch_embed_ = Linear(store_, "enc.image.patch_embed", 3 * p * p, d, rng);
        image_pos_ = store_.add_uniform("enc.image.position", {tokens, d}, 0.1, rng);
        view_embed_ = store_.add_uniform("enc.image.view", {c.input_views, d}, 0.1, rng);
        image_self_ = make_blocks(store_, "enc.image.self", c.image_blocks, c, rng);
        image_cross_ = AttentionParams(store_, "enc.image.cross", d, c.heads, c.ff_ratio, rng);
    }
    enc_self_ = make_blocks(store_, "enc.self", c.encoder_self_blocks, c, rng);
    enc_head_ = Linear(store_, "enc.head", d, 2 * c.latent_dim, rng);

    latent_in_ = Linear(store_, "dec.latent_in", c.latent_dim, d, rng);
    query_ = store_.add_uniform("dec.query", {c.latent_tokens, d}, 0.5, rng);
    up_cross_ = AttentionParams(store_, "dec.up.cross", d, c.heads, c.ff_ratio, rng);
    up_self1_ = make_blocks(store_, "dec.up.self1", c.upsample_blocks, c, rng);
    widen_ = Mlp(store_, "dec.up.widen", d, d, c.tokens_per_latent() * d, rng);
    up_self2_ = make_blocks(store_, "dec.up.self2", c.upsample_blocks, c, rng);
    center_blocks_ = make_blocks(store_, "dec.center", c.center_blocks, c, rng);
    center_head_ = Linear(store_, "dec.center.head", d, 3, rng);

    geom_branch_.expand = Linear(store_, "dec.geom.expand", d, c.corners * d, rng);
    geom_branch_.blocks = make_blocks(store_, "dec.geom.local", c.patch_blocks, c, rng);
    if (c.two_branch) {
        app_branch_.expand = Linear(store_, "dec.app.expand", d, c.corners * d, rng);
        app_branch_.blocks = make_blocks(store_, "dec.app.local", c.patch_blocks, c, rng);
    }

    AtlasDecoderConfig ac;
    ac.dim = d;
    ac.frequencies = c.frequencies;
    ac.hidden = c.decoder_hidden;
    ac.weight_mode = c.weight_mode;
    ac.shared_uv_encoder = !c.two_branch;
    ac.initial_scale = c.initial_scale;
    atlas_ = AtlasDecoder(store_, "atlas", ac, rng);
}

Tensor AtlasVAE::image_tokens(const std::vector<Image> &images) const {
    const VAEConfig &c = config_;
    if (images.size() != c.input_views) {
        throw std::invalid_argument("encode: expected " + std::to_string(c.input_views) +
                                    " input views, got " + std::to_string(images.size()));
    }
    const std::size_t p = c.image_patch;
    const std::size_t tw = static_cast<std::size_t>(c.image_width) / p;
    const std::size_t th = static_cast<std::size_t>(c.image_height) / p;
    const std::size_t tokens = tw * th;
    const std::size_t width = 3 * p * p;
    std::vector<double> raw(images.size() * tokens * width);
    for (std::size_t v = 0; v < images.size(); ++v) {
        const Image &img = images[v];
        if (img.width != c.image_width || img.height != c.image_height || img.channels != 3) {
            throw std::invalid_argument("encode: input view " + std::to_string(v) +
                                        " does not match the configured image size");
        }
        for (std::size_t ty = 0; ty < th; ++ty) {
            for (std::size_t tx = 0; tx < tw; ++tx) {
                double *row = raw.data() + ((v * tokens) + ty * tw + tx) * width;
                std::size_t k = 0;
                for (std::size_t dy = 0; dy < p; ++dy) {
                    for (std::size_t dx = 0; dx < p; ++dx) {
                        const std::size_t pix = (ty * p + dy) * static_cast<std::size_t>(img.width) + tx * p + dx;
                        for (int ch = 0; ch < 3; ++ch) {
                            row[k++] = 2.0 * img.data[pix * 3 + static_cast<std::size_t>(ch)] - 1.0;
                        }
                    }
                }
            }
        }
    }
    const std::size_t views = images.size();
    Tensor x = patch_embed_(Tensor({views * tokens, width}, std::move(raw)));
    x = x + tile_rows(image_pos_, views);
    x = x + repeat_rows(view_embed_, tokens);
    for (const auto &blk : image_self_) {
        x = self_attention(x, blk, views);
    }
    return x;
}

EncoderOutput AtlasVAE::encode(const ShapeInput &input) const {
    const VAEConfig &c = config_;
    if (input.points.size() < c.latent_tokens) {
        throw std::invalid_argument("encode: need at least " + std::to_string(c.latent_tokens) +
                                    " points, got " + std::to_string(input.points.size()));
    }
    const Tensor pe = point_encoder_(points_tensor(input.points));
    const auto idx = farthest_point_sampling(input.points, c.latent_tokens);
    Tensor z = gather_rows(pe, idx);
    for (const auto &blk : enc_cross_) {
        z = cross_attention(z, pe, blk);
    }
    if (c.input_views > 0) {
        z = cross_attention(z, image_tokens(input.images), image_cross_);
    }
    for (const auto &blk : enc_self_) {
        z = self_attention(z, blk);
    }
    const Tensor h = enc_head_(z);
    EncoderOutput out;
    out.mean = slice_cols(h, 0, c.latent_dim);
    out.logvar = clamp(slice_cols(h, c.latent_dim, 2 * c.latent_dim), kMinLogvar, kMaxLogvar);
    return out;
}

Tensor AtlasVAE::upsample_latent(const Tensor &z0) const {
    const VAEConfig &c = config_;
    if (z0.rank() != 2 || z0.dim(0) != c.latent_tokens || z0.dim(1) != c.latent_dim) {
        throw ShapeError("latent must be [" + std::to_string(c.latent_tokens) + ", " +
                         std::to_string(c.latent_dim) + "], got " + shape_string(z0.shape()));
    }
    Tensor z1 = cross_attention(query_, latent_in_(z0), up_cross_);
    for (const auto &blk : up_self1_) {
        z1 = self_attention(z1, blk);
    }
    // Pixel shuffle: row i*(M/n)+j of z2 is channel block j of widened row i.
    Tensor z2 = reshape(widen_(z1), {c.patches, c.dim});
    for (const auto &blk : up_self2_) {
        z2 = self_attention(z2, blk);
    }
    return z2;
}

Tensor AtlasVAE::decode_centers(const Tensor &z_l) const {
    Tensor x = z_l;
    for (const auto &blk : center_blocks_) {
        x = self_attention(x, blk);
    }
    return tanh(center_head_(x));
}

Tensor AtlasVAE::run_branch(const FeatureBranch &branch, const Tensor &z_l) const {
    const VAEConfig &c = config_;
    const std::size_t m = z_l.dim(0);
    Tensor x = reshape(branch.expand(z_l), {m * c.corners, c.dim});
    const Tensor global = c.global_broadcast ? repeat_rows(z_l, c.corners) : Tensor();
    for (const auto &blk : branch.blocks) {
        if (c.global_broadcast) {
            x = x + global;
        }
        x = self_attention(x, blk, c.local_attention ? m : 1);
    }
    return x;
}

std::pair<Tensor, Tensor> AtlasVAE::decode_patch_features(const Tensor &z_l) const {
    if (z_l.rank() != 2 || z_l.dim(1) != config_.dim) {
        throw ShapeError("decode_patch_features: expected [M, d], got " + shape_string(z_l.shape()));
    }
    Tensor geom = run_branch(geom_branch_, z_l);
    Tensor app = config_.two_branch ? run_branch(app_branch_, z_l) : geom;
    return {geom, app};
}

DecoderOutput AtlasVAE::decode(const Tensor &z0) const {
    DecoderOutput out;
    out.z_l = upsample_latent(z0);
    out.centers = decode_centers(out.z_l);
    std::tie(out.geom, out.app) = decode_patch_features(out.z_l);
    return out;
}

GaussianTensors AtlasVAE::decode_gaussians(const DecoderOutput &out, const Tensor &uv) const {
    return atlas_.decode(uv, out.centers, out.geom, out.app);
}

GaussianTensors AtlasVAE::decode_grid(const DecoderOutput &out, std::size_t alpha) const {
    return decode_gaussians(out, uv_rows(sample_uv_grid(alpha), out.centers.dim(0)));
}

// -- data preparation ------------------------------------------------------------

std::vector<std::size_t> training_views(const DatasetRecord &record) {
    const std::size_t ring = record.ring_views == 0 ? record.cameras.size()
                                                    : std::min(record.ring_views, record.cameras.size());
    std::vector<std::size_t> out(ring);
    std::iota(out.begin(), out.end(), 0);
    return out;
}

std::vector<std::size_t> heldout_views(const DatasetRecord &record) {
    std::vector<std::size_t> out;
    for (std::size_t k = training_views(record).size(); k < record.cameras.size(); ++k) {
        out.push_back(k);
    }
    return out;
}

namespace {

Tensor image_tensor(const Image &img) {
    if (img.channels == 3) {
        return Tensor({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width), 3},
                      img.data);
    }
    return Tensor({static_cast<std::size_t>(img.height), static_cast<std::size_t>(img.width)},
                  img.data);
}

} // namespace

ShapeTargets make_targets(const DatasetRecord &rec, const VAEConfig &c) {
    ShapeTargets t;
    const auto &pts = rec.points.points;
    t.points = points_tensor(pts);
    std::vector<std::size_t> sizes{c.patches};
    for (auto s : c.sample_counts) sizes.push_back(c.patches * s);
    for (auto n : sizes) {
        if (t.emd_targets.count(n)) continue;
        if (n > pts.size()) {
            throw ConfigError("field 'sample_counts': patches * count = " + std::to_string(n) +
                              " exceeds the " + std::to_string(pts.size()) +
                              " ground-truth points of shape '" + rec.id + "'");
        }
        const auto idx = farthest_point_sampling(pts, n);
        t.emd_targets[n] = gather_rows(t.points, idx);
    }
    t.cameras = rec.cameras;
    for (std::size_t k = 0; k < rec.cameras.size(); ++k) {
        if (rec.cameras[k].width != c.image_width || rec.cameras[k].height != c.image_height) {
            throw ConfigError("field 'image_width': shape '" + rec.id + "' has " +
                              std::to_string(rec.cameras[k].width) + "x" +
                              std::to_string(rec.cameras[k].height) + " views, config expects " +
                              std::to_string(c.image_width) + "x" + std::to_string(c.image_height));
        }
        t.rgb.push_back(image_tensor(rec.rgb[k]));
        t.alpha.push_back(image_tensor(rec.alpha[k]));
        t.depth.push_back(image_tensor(rec.depth[k]));
    }
    return t;
}

ShapeInput make_input(const DatasetRecord &rec, const VAEConfig &c) {
    ShapeInput in;
    const auto &pts = rec.points.points;
    if (pts.size() < c.latent_tokens) {
        throw DataError("shape '" + rec.id + "': " + std::to_string(pts.size()) +
                        " points, need at least " + std::to_string(c.latent_tokens));
    }
    if (pts.size() > c.input_points) {
        for (auto i : farthest_point_sampling(pts, c.input_points)) in.points.push_back(pts[i]);
    } else {
        in.points = pts;
    }
    if (c.input_views > 0) {
        const auto ring = training_views(rec);
        if (ring.size() < c.input_views) {
            throw DataError("shape '" + rec.id + "': fewer ring views than input_views");
        }
        for (std::size_t k = 0; k < c.input_views; ++k) {
            in.images.push_back(rec.rgb[ring[k * ring.size() / c.input_views]]);
        }
    }
    return in;
}

// -- loss --------------------------------------------------------------------------

LossResult vae_loss(const AtlasVAE &model, const ShapeInput &input, const ShapeTargets &targets,
                    Rng &rng, const LossOptions &options) {
    const VAEConfig &c = model.config();
    const EncoderOutput enc = model.encode(input);
    const Tensor z0 = options.use_mean ? enc.mean : reparameterize(enc.mean, enc.logvar, rng);
    const DecoderOutput dec = model.decode(z0);
    const std::size_t m = c.patches;

    LossResult res;
    LossParts &parts = res.parts;
    auto emd_target = [&](std::size_t n) -> const Tensor & {
        auto it = targets.emd_targets.find(n);
        if (it == targets.emd_targets.end()) {
            throw std::invalid_argument("vae_loss: no EMD target of size " + std::to_string(n));
        }
        return it->second;
    };

    const Tensor l_center = chamfer(dec.centers, targets.points) + emd_approx(dec.centers, emd_target(m));
    parts.center = l_center.item();
    Tensor total = l_center;

    for (std::size_t s : c.sample_counts) {
        std::vector<std::vector<UV>> per_patch(m);
        for (auto &p : per_patch) p = sample_uv_random(s, rng);
        const Tensor pos = model.atlas().decode_positions(uv_rows(per_patch), dec.centers, dec.geom);
        const Tensor l_mu = chamfer(pos, targets.points) + emd_approx(pos, emd_target(m * s));
        parts.mu_by_count.push_back(l_mu.item());
        parts.mu += l_mu.item();
        total = total + l_mu;
    }

    const Tensor l_kl = kl_diag_gaussian(enc.mean, enc.logvar);
    parts.kl = l_kl.item();
    total = total + scale(l_kl, c.lambda_kl);

    const double lambda_r = c.lambda_render();
    if (lambda_r > 0.0 || options.log_render) {
        if (options.views.empty()) {
            throw std::invalid_argument("vae_loss: rendering needs supervision views");
        }
        std::optional<NoGradGuard> guard;
        if (lambda_r == 0.0) guard.emplace();
        const GaussianTensors g = model.decode_grid(dec, c.grid);
        Tensor render = Tensor::scalar(0.0);
        Tensor perceptual = Tensor::scalar(0.0);
        for (std::size_t v : options.views) {
            if (v >= targets.cameras.size()) {
                throw std::invalid_argument("vae_loss: view index out of range");
            }
            const Camera &cam = targets.cameras[v];
            const RenderTensors r = rasterize(g, cam, c.background);
            render = render + mse(r.rgb, targets.rgb[v]) + mse(r.alpha, targets.alpha[v]) +
                     mse(scale(r.depth, 1.0 / cam.far), targets.depth[v]);
            if (options.perceptual) {
                perceptual = perceptual + options.perceptual(r.rgb, targets.rgb[v]);
            }
        }
        const double inv = 1.0 / static_cast<double>(options.views.size());
        render = scale(render, inv);
        perceptual = scale(perceptual, inv);
        parts.render = render.item();
        parts.perceptual = perceptual.item();
        if (lambda_r > 0.0) {
            total = total + scale(render + perceptual, lambda_r);
        }
    }
    parts.total = total.item();
    res.total = total;
    return res;
}

double render_psnr(const AtlasVAE &model, const ShapeInput &input, const ShapeTargets &targets,
                   const std::vector<std::size_t> &views) {
    if (views.empty()) {
        return 0.0;
    }
    NoGradGuard no_grad;
    const VAEConfig &c = model.config();
    const DecoderOutput dec = model.decode(model.encode(input).mean);
    const GaussianTensors g = model.decode_grid(dec, c.grid);
    double sum = 0.0;
    for (std::size_t v : views) {
        const RenderTensors r = rasterize(g, targets.cameras[v], c.background);
        const auto a = r.rgb.values();
        const auto b = targets.rgb[v].values();
        sum += psnr({a.begin(), a.end()}, {b.begin(), b.end()});
    }
    return sum / static_cast<double>(views.size());
}

// -- checkpoints -------------------------------------------------------------------

Tensor text_tensor(const std::string &text) {
    std::vector<double> v(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        v[i] = static_cast<unsigned char>(text[i]);
    }
    return Tensor({text.size()}, std::move(v));
}

std::string tensor_text(const Tensor &t) {
    std::string s;
    for (double v : t.values()) s.push_back(static_cast<char>(static_cast<unsigned char>(v)));
    return s;
}

void save_vae(const fs::path &path, const AtlasVAE &model, const NamedTensors &extra) {
    NamedTensors all = export_params(model.params(), "param/");
    all.emplace_back("meta/vae_config", text_tensor(format_key_values(model.config().to_key_values())));
    all.insert(all.end(), extra.begin(), extra.end());
    save_tensors(path, all);
}

VAEConfig read_vae_config(const NamedTensors &tensors) {
    if (!has_tensor(tensors, "meta/vae_config")) {
        throw CheckpointError("checkpoint has no VAE config (not a VAE checkpoint?)");
    }
    return VAEConfig::from_key_values(
        parse_key_values(tensor_text(find_tensor(tensors, "meta/vae_config")), "checkpoint"));
}

AtlasVAE load_vae(const fs::path &path) {
    const NamedTensors tensors = load_tensors(path);
    AtlasVAE model(read_vae_config(tensors), 0);
    load_params(model.params(), tensors, "param/");
    return model;
}

// -- trainer -------------------------------------------------------------------------

VaeTrainer::VaeTrainer(AtlasVAE &model, std::vector<DatasetRecord> data, VaeTrainOptions options)
    : model_(model), data_(std::move(data)), options_(std::move(options)),
      optimizer_(model.params(), options_.adamw) {
    if (data_.empty()) {
        throw std::invalid_argument("VaeTrainer: empty dataset");
    }
    for (const auto &rec : data_) {
        inputs_.push_back(make_input(rec, model_.config()));
        targets_.push_back(make_targets(rec, model_.config()));
    }
    stage_ = model_.config().stage;
}

std::size_t VaeTrainer::stage_budget(int stage) const {
    return stage == 1 ? options_.stage1_steps : options_.stage2_steps;
}

LossParts VaeTrainer::step() {
    PrecisionGuard precision_guard(options_.precision);
    const std::size_t shapes = inputs_.size();
    const std::size_t shape = stage_step_ % shapes;
    const std::size_t epoch_in_stage = stage_step_ / shapes;
    Rng rng(Rng::derive(options_.seed, {static_cast<std::uint64_t>(stage_), epoch_in_stage, shape}));
    auto views = training_views(data_[shape]);
    std::shuffle(views.begin(), views.end(), rng.engine());
    views.resize(std::min(views.size(), model_.config().views));

    LossOptions lo;
    lo.views = views;
    lo.perceptual = options_.perceptual;
    model_.params().zero_grad();
    LossResult res;
    try {
        res = vae_loss(model_, inputs_[shape], targets_[shape], rng, lo);
        if (!std::isfinite(res.parts.total)) {
            throw NonFiniteError("non-finite total loss");
        }
        res.total.backward();
        OneCycle sched;
        sched.max_lr = options_.lr;
        sched.total_steps = stage_budget(stage_);
        sched.pct_start = options_.pct_start;
        optimizer_.step(sched.lr(stage_step_));
    } catch (const NonFiniteError &e) {
        dump_diagnostic(std::string(e.what()) + " (shape " + data_[shape].id + ")");
        throw TrainingError("training aborted at stage " + std::to_string(stage_) + " step " +
                            std::to_string(stage_step_) + ": " + e.what());
    }
    ++stage_step_;
    ++global_step_;
    epoch_parts_.push_back(res.parts);
    return res.parts;
}

bool VaeTrainer::run_stage(int stage) {
    if (stage != 1 && stage != 2) {
        throw std::invalid_argument("run_stage: stage must be 1 or 2");
    }
    if (stage != stage_) {
        stage_ = stage;
        stage_step_ = 0;
        epoch_parts_.clear();
    }
    model_.mutable_config().stage = stage;
    const std::size_t budget = stage_budget(stage);
    std::size_t taken = 0;
    while (stage_step_ < budget) {
        if (options_.stop_after > 0 && taken == options_.stop_after) {
            if (!options_.out_dir.empty()) {
                save_checkpoint(options_.out_dir / "vae_last.atlg");
            }
            return false;
        }
        step();
        ++taken;
        if (stage_step_ % inputs_.size() == 0) {
            finish_epoch();
        }
    }
    if (!epoch_parts_.empty()) {
        finish_epoch();
    }
    if (!options_.out_dir.empty()) {
        save_checkpoint(options_.out_dir / ("vae_stage" + std::to_string(stage) + ".atlg"));
        save_checkpoint(options_.out_dir / "vae_last.atlg");
    }
    return true;
}

void VaeTrainer::finish_epoch() {
    EpochMetrics m;
    m.epoch = epoch_;
    m.stage = stage_;
    m.step = global_step_;
    OneCycle sched;
    sched.max_lr = options_.lr;
    sched.total_steps = stage_budget(stage_);
    sched.pct_start = options_.pct_start;
    m.lr = sched.lr(stage_step_ == 0 ? 0 : stage_step_ - 1);
    const double inv = 1.0 / static_cast<double>(epoch_parts_.size());
    for (const auto &p : epoch_parts_) {
        m.loss.total += p.total * inv;
        m.loss.center += p.center * inv;
        m.loss.mu += p.mu * inv;
        m.loss.render += p.render * inv;
        m.loss.perceptual += p.perceptual * inv;
        m.loss.kl += p.kl * inv;
    }
    epoch_parts_.clear();
    if (options_.psnr_every > 0 && epoch_ % options_.psnr_every == 0) {
        m.psnr_heldout = heldout_psnr();
    } else {
        m.psnr_heldout = std::nan("");
    }
    history_.push_back(m);
    append_metrics(m);
    if (on_epoch) on_epoch(m);
    ++epoch_;
    if (!options_.out_dir.empty() && options_.checkpoint_every > 0 &&
        epoch_ % options_.checkpoint_every == 0) {
        save_checkpoint(options_.out_dir / "vae_last.atlg");
    }
}

void VaeTrainer::append_metrics(const EpochMetrics &m) const {
    if (options_.out_dir.empty()) return;
    const fs::path path = options_.out_dir / "metrics_vae.csv";
    const bool fresh = !fs::exists(path);
    std::ofstream os(path, std::ios::app);
    if (!os) {
        throw DataError(path.string() + ": cannot open for writing");
    }
    if (fresh) os << kVaeMetricsHeader << '\n';
    char buf[512];
    std::snprintf(buf, sizeof(buf), "%zu,%d,%zu,%.6g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.4f", m.epoch,
                  m.stage, m.step, m.lr, m.loss.total, m.loss.center, m.loss.mu, m.loss.render,
                  m.loss.perceptual, m.loss.kl, m.psnr_heldout);
    os << buf << '\n';
}

void VaeTrainer::dump_diagnostic(const std::string &reason) const {
    if (options_.out_dir.empty()) return;
    std::error_code ec;
    fs::create_directories(options_.out_dir, ec);
    std::ofstream os(options_.out_dir / "diagnostic.txt");
    os << "reason = " << reason << "\nstage = " << stage_ << "\nstage_step = " << stage_step_
       << "\nglobal_step = " << global_step_ << "\nepoch = " << epoch_ << "\n";
    for (const auto &[name, p] : model_.params().entries()) {
        double mx = 0.0;
        bool finite = true;
        for (double v : p.values()) {
            finite = finite && std::isfinite(v);
            mx = std::max(mx, std::abs(v));
        }
        os << "param " << name << " max_abs=" << mx << (finite ? "" : " NON-FINITE") << "\n";
    }
    try {
        save_vae(options_.out_dir / "diagnostic.atlg", model_);
    } catch (const std::exception &) {
        // Parameters may be non-finite; the text dump above still applies.
    }
}

void VaeTrainer::save_checkpoint(const fs::path &path) const {
    NamedTensors extra = optimizer_.state();
    extra.emplace_back("trainer/progress",
                       Tensor({4}, std::vector<double>{static_cast<double>(stage_),
                                                       static_cast<double>(stage_step_),
                                                       static_cast<double>(global_step_),
                                                       static_cast<double>(epoch_)}));
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    save_vae(path, model_, extra);
}

void VaeTrainer::load_checkpoint(const fs::path &path) {
    const NamedTensors tensors = load_tensors(path);
    model_.config().check_compatible(read_vae_config(tensors));
    load_params(model_.params(), tensors, "param/");
    optimizer_.load_state(tensors);
    const auto p = find_tensor(tensors, "trainer/progress").values();
    stage_ = static_cast<int>(p[0]);
    stage_step_ = static_cast<std::size_t>(p[1]);
    global_step_ = static_cast<std::size_t>(p[2]);
    epoch_ = static_cast<std::size_t>(p[3]);
    epoch_parts_.clear();
    model_.mutable_config().stage = stage_;
}

LossParts VaeTrainer::evaluate(int stage) const {
    NoGradGuard no_grad;
    const int saved = model_.config().stage;
    model_.mutable_config().stage = stage;
    LossParts sum;
    const double inv = 1.0 / static_cast<double>(inputs_.size());
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        Rng rng(Rng::derive(options_.seed, {0xe7a1ULL, i}));
        LossOptions lo;
        lo.views = training_views(data_[i]);
        lo.use_mean = true;
        lo.log_render = true;
        const LossParts p = vae_loss(model_, inputs_[i], targets_[i], rng, lo).parts;
        sum.total += p.total * inv;
        sum.center += p.center * inv;
        sum.mu += p.mu * inv;
        sum.render += p.render * inv;
        sum.perceptual += p.perceptual * inv;
        sum.kl += p.kl * inv;
    }
    model_.mutable_config().stage = saved;
    return sum;
}

double VaeTrainer::training_psnr() const {
    double s = 0.0;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        s += render_psnr(model_, inputs_[i], targets_[i], training_views(data_[i]));
    }
    return s / static_cast<double>(inputs_.size());
}

double VaeTrainer::heldout_psnr() const {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        const auto views = heldout_views(data_[i]);
        if (views.empty()) continue;
        s += render_psnr(model_, inputs_[i], targets_[i], views);
        ++n;
    }
    return n == 0 ? std::nan("") : s / static_cast<double>(n);
}

} // namespace atlasgs
