#include "oss/model.hpp"

#include <cmath>

#include "oss/rng.hpp"

namespace oss {

namespace {

// Safe-PAU coefficients fitted offline to leaky-ReLU(0.01): weighted rational
// least squares (Sanathanan-Koerner iteration) on [-3,3] plus positive-tail
// anchor points so the unit-slope asymptote is preserved.
constexpr double kPauNumInit[6] = {0.056463455889152213, 0.58338023611854506,
                                   1.4033322069847407, 1.3221568682809473,
                                   0.51919626203178848, 0.072478773970957644};
constexpr double kPauDenInit[4] = {0.76551789090540368, 1.6349383037426486,
                                   0.46704600388390177, 0.074946154440215879};

}  // namespace

OssNetConfig OssNetConfig::variant(char which, int in_channels_) {
    OssNetConfig cfg;
    cfg.in_channels = in_channels_;
    switch (which) {
        case 'O':
            cfg.use_patch_encoder = false;
            cfg.use_output_skips = false;
            cfg.use_aux_head = false;
            break;
        case 'A':
            cfg.patch_source_size = 7;
            cfg.use_output_skips = false;
            cfg.use_aux_head = false;
            break;
        case 'B':
            cfg.patch_source_size = 14;
            cfg.use_output_skips = false;
            cfg.use_aux_head = false;
            break;
        case 'C':
            cfg.patch_source_size = 7;
            break;
        case 'D':
            cfg.patch_source_size = 14;
            break;
        default:
            throw ArgumentError(std::string("unknown OSS-Net variant '") + which + "'");
    }
    return cfg;
}

OssNetConfig OssNetConfig::paper_scale(int in_channels_) {
    OssNetConfig cfg;
    cfg.in_channels = in_channels_;
    cfg.encoder_channels = {32, 64, 128, 256};
    cfg.latent_dim = 256;
    cfg.decoder_width = 512;
    cfg.patch_channels = {16, 32};
    return cfg;
}

int OssNetConfig::local_latent_dim() const {
    if (!use_patch_encoder) return 0;
    // Two stride-2 convolutions: 7 -> 4 -> 2, flattened.
    return patch_channels.back() * 8;
}

int OssNetConfig::decoder_input_dim() const { return 3 + latent_dim + local_latent_dim(); }

void OssNetConfig::validate() const {
    if (in_channels < 1) throw ArgumentError("in_channels must be positive");
    if (downscale_factor < 1) throw ArgumentError("downscale_factor must be >= 1");
    if (encoder_stages < 1 ||
        encoder_channels.size() != static_cast<std::size_t>(encoder_stages)) {
        throw ArgumentError("encoder_channels must list one width per stage");
    }
    for (int c : encoder_channels)
        if (c < 1) throw ArgumentError("encoder widths must be positive");
    if (latent_dim < 1) throw ArgumentError("latent_dim must be positive");
    if (decoder_blocks < 1) throw ArgumentError("decoder_blocks must be >= 1");
    if (decoder_width < 1) throw ArgumentError("decoder_width must be positive");
    if (patch_source_size != 7 && patch_source_size != 14) {
        throw ArgumentError("patch_source_size must be 7 or 14");
    }
    if (use_patch_encoder && patch_channels.size() != 2) {
        throw ArgumentError("patch encoder uses exactly two convolutions");
    }
}

ad::Param& ModelParams::add(const std::string& name, std::vector<int> shape, bool trainable,
                            bool pau_group) {
    if (by_name_.count(name)) throw ArgumentError("duplicate parameter name: " + name);
    storage_.emplace_back();
    ad::Param& p = storage_.back();
    p.name = name;
    p.value = ad::Tensor(shape);
    p.grad = ad::Tensor(std::move(shape));
    p.trainable = trainable;
    p.pau_group = pau_group;
    by_name_[name] = &p;
    return p;
}

ad::Param& ModelParams::at(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ArgumentError("unknown parameter: " + name);
    return *it->second;
}

const ad::Param& ModelParams::at(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw ArgumentError("unknown parameter: " + name);
    return *it->second;
}

std::vector<ad::Param*> ModelParams::all() {
    std::vector<ad::Param*> out;
    for (auto& p : storage_) out.push_back(&p);
    return out;
}

std::vector<const ad::Param*> ModelParams::all() const {
    std::vector<const ad::Param*> out;
    for (const auto& p : storage_) out.push_back(&p);
    return out;
}

std::vector<ad::Param*> ModelParams::trainable() {
    std::vector<ad::Param*> out;
    for (auto& p : storage_)
        if (p.trainable) out.push_back(&p);
    return out;
}

void ModelParams::zero_grads() {
    for (auto& p : storage_) p.zero_grad();
}

OssNet::OssNet(const OssNetConfig& config, std::uint64_t seed)
    : params_(std::make_shared<ModelParams>()) {
    config.validate();
    params_->config = config;
    build_params(seed);
}

OssNet::OssNet(std::shared_ptr<ModelParams> params) : params_(std::move(params)) {
    params_->config.validate();
}

void OssNet::build_params(std::uint64_t seed) {
    const OssNetConfig& cfg = params_->config;
    Rng rng(seed ^ 0x055u);

    const auto he_init = [&](ad::Param& p, int fan_in) {
        const double std = std::sqrt(2.0 / fan_in);
        for (double& v : p.value.data) v = std * rng.normal();
    };
    const auto add_conv = [&](const std::string& name, int out_ch, int in_ch, int k) {
        ad::Param& w = params_->add(name + ".w", {out_ch, in_ch, k, k, k});
        he_init(w, in_ch * k * k * k);
        params_->add(name + ".b", {out_ch});
    };
    const auto add_linear = [&](const std::string& name, int out_f, int in_f) {
        ad::Param& w = params_->add(name + ".w", {out_f, in_f});
        he_init(w, in_f);
        params_->add(name + ".b", {out_f});
    };
    const auto add_pau = [&](const std::string& name) {
        ad::Param& a = params_->add(name + ".a", {6}, true, true);
        ad::Param& b = params_->add(name + ".b", {4}, true, true);
        for (int i = 0; i < 6; ++i) a.value.data[static_cast<std::size_t>(i)] = kPauNumInit[i];
        for (int i = 0; i < 4; ++i) b.value.data[static_cast<std::size_t>(i)] = kPauDenInit[i];
    };
    const auto add_cbn = [&](const std::string& name) {
        const int w = cfg.decoder_width;
        ad::Param& gw = params_->add(name + ".gamma.w", {w, cfg.latent_dim});
        (void)gw;  // zero-init: predictor starts at identity scale
        ad::Param& gb = params_->add(name + ".gamma.b", {w});
        for (double& v : gb.value.data) v = 1.0;
        params_->add(name + ".beta.w", {w, cfg.latent_dim});
        params_->add(name + ".beta.b", {w});
        params_->add(name + ".rmean", {w}, false);
        ad::Param& rv = params_->add(name + ".rvar", {w}, false);
        for (double& v : rv.value.data) v = 1.0;
    };

    const bool enc_pau =
        cfg.pau_placement == PauPlacement::Encoder || cfg.pau_placement == PauPlacement::Both;
    const bool dec_pau =
        cfg.pau_placement == PauPlacement::Decoder || cfg.pau_placement == PauPlacement::Both;

    // Encoder: per stage one stride-2 conv plus a two-conv residual block.
    int prev = cfg.in_channels;
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        const int ch = cfg.encoder_channels[static_cast<std::size_t>(s)];
        const std::string base = "enc.s" + std::to_string(s);
        add_conv(base + ".down", ch, prev, 3);
        add_conv(base + ".res1", ch, ch, 3);
        add_conv(base + ".res2", ch, ch, 3);
        if (enc_pau) {
            add_pau(base + ".act0");
            add_pau(base + ".act_mid");
            add_pau(base + ".act_out");
        }
        prev = ch;
    }
    int skip_in = 0;
    if (cfg.use_output_skips) {
        for (int c : cfg.encoder_channels) skip_in += c;
    } else {
        skip_in = cfg.encoder_channels.back();
    }
    add_linear("enc.latent", cfg.latent_dim, skip_in);
    if (cfg.use_aux_head) add_conv("enc.aux", 1, cfg.encoder_channels.back(), 1);

    if (cfg.use_patch_encoder) {
        add_conv("patch.c1", cfg.patch_channels[0], cfg.in_channels, 3);
        add_conv("patch.c2", cfg.patch_channels[1], cfg.patch_channels[0], 3);
        if (enc_pau) {
            add_pau("patch.act0");
            add_pau("patch.act1");
        }
    }

    add_linear("dec.in", cfg.decoder_width, cfg.decoder_input_dim());
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        const std::string base = "dec.b" + std::to_string(i);
        add_cbn(base + ".cbn1");
        add_linear(base + ".fc1", cfg.decoder_width, cfg.decoder_width);
        add_cbn(base + ".cbn2");
        add_linear(base + ".fc2", cfg.decoder_width, cfg.decoder_width);
        if (dec_pau) {
            add_pau(base + ".pau1");
            add_pau(base + ".pau2");
        }
    }
    add_cbn("dec.final.cbn");
    if (dec_pau) add_pau("dec.final.pau");
    add_linear("dec.out", 1, cfg.decoder_width);
}

ad::NodePtr OssNet::activation(ad::Tape& tape, const ad::NodePtr& x, bool decoder_side,
                               const std::string& pau_name) {
    const OssNetConfig& cfg = params_->config;
    const bool use_pau =
        decoder_side
            ? (cfg.pau_placement == PauPlacement::Decoder || cfg.pau_placement == PauPlacement::Both)
            : (cfg.pau_placement == PauPlacement::Encoder || cfg.pau_placement == PauPlacement::Both);
    if (use_pau) {
        return ad::pau(tape, x, tape.leaf(params_->at(pau_name + ".a")),
                       tape.leaf(params_->at(pau_name + ".b")));
    }
    return ad::leaky_relu(tape, x, cfg.leaky_slope);
}

ad::NodePtr OssNet::cbn(ad::Tape& tape, const ad::NodePtr& x, const ad::NodePtr& latent,
                        const std::string& name, ad::Mode mode) {
    const OssNetConfig& cfg = params_->config;
    const int w = cfg.decoder_width;
    ad::NodePtr gamma = ad::linear(tape, latent, tape.leaf(params_->at(name + ".gamma.w")),
                                   tape.leaf(params_->at(name + ".gamma.b")));
    ad::NodePtr beta = ad::linear(tape, latent, tape.leaf(params_->at(name + ".beta.w")),
                                  tape.leaf(params_->at(name + ".beta.b")));
    if (latent->val.dim(0) == 1) {
        gamma = ad::reshape(tape, gamma, {w});
        beta = ad::reshape(tape, beta, {w});
    }
    ad::BnStats stats{&params_->at(name + ".rmean"), &params_->at(name + ".rvar")};
    return ad::cond_batchnorm(tape, x, gamma, beta, stats, mode, cfg.bn_eps, cfg.bn_momentum);
}

ad::Tensor OssNet::prepare_global_input(const Volume& volume) const {
    const OssNetConfig& cfg = params_->config;
    if (volume.channels != cfg.in_channels) {
        throw ShapeError("volume has " + std::to_string(volume.channels) +
                         " channels, model expects " + std::to_string(cfg.in_channels));
    }
    const Volume ds = downscale_avg(volume, cfg.downscale_factor);
    ad::Tensor input({1, ds.channels, ds.d, ds.h, ds.w});
    for (std::size_t i = 0; i < ds.data.size(); ++i) input.data[i] = ds.data[i];
    return input;
}

ad::Tensor OssNet::pack_patches(const std::vector<Patch>& patches) {
    if (patches.empty()) throw ArgumentError("pack_patches requires at least one patch");
    const int n = static_cast<int>(patches.size());
    const int c = patches[0].channels;
    ad::Tensor out({n, c, 7, 7, 7});
    const std::size_t per = static_cast<std::size_t>(c) * 343;
    for (int i = 0; i < n; ++i) {
        if (patches[static_cast<std::size_t>(i)].values.size() != per) {
            throw ShapeError("patch " + std::to_string(i) + " has inconsistent size");
        }
        std::copy(patches[static_cast<std::size_t>(i)].values.begin(),
                  patches[static_cast<std::size_t>(i)].values.end(),
                  out.data.begin() + static_cast<std::size_t>(i) * per);
    }
    return out;
}

ad::Tensor OssNet::normalize_locations(const std::vector<Vec3>& locations,
                                       const GridShape& shape) {
    const int n = static_cast<int>(locations.size());
    ad::Tensor out({n, 3});
    for (int i = 0; i < n; ++i) {
        const Vec3& p = locations[static_cast<std::size_t>(i)];
        out.data[static_cast<std::size_t>(i) * 3 + 0] = 2.0 * (p.x + 0.5) / shape.w - 1.0;
        out.data[static_cast<std::size_t>(i) * 3 + 1] = 2.0 * (p.y + 0.5) / shape.h - 1.0;
        out.data[static_cast<std::size_t>(i) * 3 + 2] = 2.0 * (p.z + 0.5) / shape.d - 1.0;
    }
    return out;
}

GridShape OssNet::aux_grid_shape(const GridShape& volume_shape) const {
    const OssNetConfig& cfg = params_->config;
    const auto stage_out = [](int s) { return (s - 1) / 2 + 1; };
    const auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    GridShape g{ceil_div(volume_shape.d, cfg.downscale_factor),
                ceil_div(volume_shape.h, cfg.downscale_factor),
                ceil_div(volume_shape.w, cfg.downscale_factor)};
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        g.d = stage_out(g.d);
        g.h = stage_out(g.h);
        g.w = stage_out(g.w);
    }
    return g;
}

OssNet::GlobalEncoding OssNet::encode_global(ad::Tape& tape, const ad::Tensor& input,
                                             ad::Mode mode) {
    (void)mode;  // the encoder has no batch statistics
    const OssNetConfig& cfg = params_->config;
    if (input.shape.size() != 5 || input.dim(1) != cfg.in_channels) {
        throw ShapeError("encoder input must be [1,C,D,H,W] with C = in_channels");
    }
    ad::NodePtr h = tape.constant(input);
    std::vector<ad::NodePtr> stage_outputs;
    for (int s = 0; s < cfg.encoder_stages; ++s) {
        const std::string base = "enc.s" + std::to_string(s);
        h = ad::conv3d(tape, h, tape.leaf(params_->at(base + ".down.w")),
                       tape.leaf(params_->at(base + ".down.b")), /*stride=*/2, /*pad=*/1);
        h = activation(tape, h, false, base + ".act0");
        ad::NodePtr r = ad::conv3d(tape, h, tape.leaf(params_->at(base + ".res1.w")),
                                   tape.leaf(params_->at(base + ".res1.b")), 1, 1);
        r = activation(tape, r, false, base + ".act_mid");
        r = ad::conv3d(tape, r, tape.leaf(params_->at(base + ".res2.w")),
                       tape.leaf(params_->at(base + ".res2.b")), 1, 1);
        h = activation(tape, ad::add(tape, h, r), false, base + ".act_out");
        stage_outputs.push_back(h);
    }

    ad::NodePtr pooled;
    if (cfg.use_output_skips) {
        std::vector<ad::NodePtr> pools;
        for (const auto& st : stage_outputs) pools.push_back(ad::global_avg_pool(tape, st));
        pooled = ad::concat_cols(tape, pools);
    } else {
        pooled = ad::global_avg_pool(tape, stage_outputs.back());
    }
    GlobalEncoding out;
    out.latent = ad::linear(tape, pooled, tape.leaf(params_->at("enc.latent.w")),
                            tape.leaf(params_->at("enc.latent.b")));
    if (cfg.use_aux_head) {
        ad::NodePtr logits =
            ad::conv3d(tape, stage_outputs.back(), tape.leaf(params_->at("enc.aux.w")),
                       tape.leaf(params_->at("enc.aux.b")), 1, 0);
        out.aux = ad::sigmoid(tape, logits);
        out.aux_shape = {logits->val.dim(2), logits->val.dim(3), logits->val.dim(4)};
    }
    return out;
}

ad::NodePtr OssNet::encode_patches(ad::Tape& tape, const ad::Tensor& patches) {
    const OssNetConfig& cfg = params_->config;
    if (!cfg.use_patch_encoder) throw CapabilityError("model has no patch encoder");
    if (patches.shape.size() != 5 || patches.dim(1) != cfg.in_channels || patches.dim(2) != 7 ||
        patches.dim(3) != 7 || patches.dim(4) != 7) {
        throw ShapeError("patch batch must be [N,C,7,7,7]");
    }
    ad::NodePtr h = tape.constant(patches);
    h = ad::conv3d(tape, h, tape.leaf(params_->at("patch.c1.w")),
                   tape.leaf(params_->at("patch.c1.b")), 2, 1);
    h = activation(tape, h, false, "patch.act0");
    h = ad::conv3d(tape, h, tape.leaf(params_->at("patch.c2.w")),
                   tape.leaf(params_->at("patch.c2.b")), 2, 1);
    h = activation(tape, h, false, "patch.act1");
    return ad::reshape(tape, h, {patches.dim(0), cfg.local_latent_dim()});
}

ad::NodePtr OssNet::decode_occupancy(ad::Tape& tape, const ad::Tensor& normalized_locations,
                                     const ad::NodePtr& global_latent,
                                     const ad::NodePtr& local_latents, ad::Mode mode) {
    const OssNetConfig& cfg = params_->config;
    if (normalized_locations.shape.size() != 2 || normalized_locations.dim(1) != 3) {
        throw ShapeError("locations must be [N,3]");
    }
    const int n = normalized_locations.dim(0);
    if (!global_latent || global_latent->val.shape.size() != 2 ||
        (global_latent->val.dim(0) != 1 && global_latent->val.dim(0) != n)) {
        throw ShapeError("global latent must have 1 row or one row per location");
    }
    const bool latent_per_row = global_latent->val.dim(0) == n && n > 1;
    std::vector<ad::NodePtr> inputs;
    inputs.push_back(tape.constant(normalized_locations));
    inputs.push_back(latent_per_row ? global_latent
                                    : ad::broadcast_rows(tape, global_latent, n));
    if (cfg.use_patch_encoder) {
        if (!local_latents) throw ShapeError("model expects local latents");
        if (local_latents->val.dim(0) != n) {
            throw ShapeError("local latent count does not match locations");
        }
        inputs.push_back(local_latents);
    }
    ad::NodePtr h = ad::concat_cols(tape, inputs);
    h = ad::linear(tape, h, tape.leaf(params_->at("dec.in.w")),
                   tape.leaf(params_->at("dec.in.b")));
    for (int i = 0; i < cfg.decoder_blocks; ++i) {
        const std::string base = "dec.b" + std::to_string(i);
        ad::NodePtr t = cbn(tape, h, global_latent, base + ".cbn1", mode);
        t = activation(tape, t, true, base + ".pau1");
        t = ad::linear(tape, t, tape.leaf(params_->at(base + ".fc1.w")),
                       tape.leaf(params_->at(base + ".fc1.b")));
        t = cbn(tape, t, global_latent, base + ".cbn2", mode);
        t = activation(tape, t, true, base + ".pau2");
        t = ad::linear(tape, t, tape.leaf(params_->at(base + ".fc2.w")),
                       tape.leaf(params_->at(base + ".fc2.b")));
        h = ad::add(tape, h, t);
    }
    h = cbn(tape, h, global_latent, "dec.final.cbn", mode);
    h = activation(tape, h, true, "dec.final.pau");
    h = ad::linear(tape, h, tape.leaf(params_->at("dec.out.w")),
                   tape.leaf(params_->at("dec.out.b")));
    h = ad::sigmoid(tape, h);
    return ad::reshape(tape, h, {n});
}

OssNet::ForwardNodes OssNet::forward_nodes(ad::Tape& tape, const Volume& volume,
                                           const SampleBatch& batch, ad::Mode mode) {
    const OssNetConfig& cfg = params_->config;
    ForwardNodes out;
    const GlobalEncoding global = encode_global(tape, prepare_global_input(volume), mode);
    out.aux = global.aux;
    out.aux_shape = global.aux_shape;
    if (batch.locations.empty()) return out;

    ad::NodePtr local;
    if (cfg.use_patch_encoder) {
        if (batch.patches.size() != batch.locations.size()) {
            throw ShapeError("batch patches do not match locations");
        }
        local = encode_patches(tape, pack_patches(batch.patches));
    }
    const ad::Tensor locs =
        normalize_locations(batch.locations, {volume.d, volume.h, volume.w});
    out.probs = decode_occupancy(tape, locs, global.latent, local, mode);
    return out;
}

ForwardResult OssNet::forward(const Volume& volume, const SampleBatch& batch, ad::Mode mode) {
    ad::Tape tape(/*record_grad=*/false);
    const ForwardNodes nodes = forward_nodes(tape, volume, batch, mode);
    ForwardResult result;
    if (nodes.probs) result.probs = nodes.probs->val.data;
    if (nodes.aux) {
        result.aux.present = true;
        result.aux.shape = nodes.aux_shape;
        result.aux.probs = nodes.aux->val.data;
    }
    return result;
}

AuxSegmentation OssNet::predict_aux(const Volume& volume) {
    if (!params_->config.use_aux_head) {
        throw CapabilityError("model has no auxiliary segmentation head");
    }
    ad::Tape tape(/*record_grad=*/false);
    const GlobalEncoding global = encode_global(tape, prepare_global_input(volume), ad::Mode::Eval);
    AuxSegmentation aux;
    aux.present = true;
    aux.shape = global.aux_shape;
    aux.probs = global.aux->val.data;
    return aux;
}

}  // namespace oss
