#include "oss/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace oss {

namespace {

using nlohmann::json;

const char* placement_name(PauPlacement p) {
    switch (p) {
        case PauPlacement::None: return "none";
        case PauPlacement::Decoder: return "decoder";
        case PauPlacement::Encoder: return "encoder";
        case PauPlacement::Both: return "both";
    }
    return "decoder";
}

PauPlacement placement_from(const std::string& s) {
    if (s == "none") return PauPlacement::None;
    if (s == "decoder") return PauPlacement::Decoder;
    if (s == "encoder") return PauPlacement::Encoder;
    if (s == "both") return PauPlacement::Both;
    throw FormatError("unknown pau placement: " + s);
}

json config_to_json(const OssNetConfig& c) {
    return json{{"in_channels", c.in_channels},
                {"downscale_factor", c.downscale_factor},
                {"encoder_stages", c.encoder_stages},
                {"encoder_channels", c.encoder_channels},
                {"latent_dim", c.latent_dim},
                {"use_patch_encoder", c.use_patch_encoder},
                {"patch_source_size", c.patch_source_size},
                {"patch_channels", c.patch_channels},
                {"decoder_blocks", c.decoder_blocks},
                {"decoder_width", c.decoder_width},
                {"use_output_skips", c.use_output_skips},
                {"use_aux_head", c.use_aux_head},
                {"pau_placement", placement_name(c.pau_placement)},
                {"bn_eps", c.bn_eps},
                {"bn_momentum", c.bn_momentum},
                {"leaky_slope", c.leaky_slope}};
}

OssNetConfig config_from_json(const json& j) {
    OssNetConfig c;
    c.in_channels = j.at("in_channels").get<int>();
    c.downscale_factor = j.at("downscale_factor").get<int>();
    c.encoder_stages = j.at("encoder_stages").get<int>();
    c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    c.latent_dim = j.at("latent_dim").get<int>();
    c.use_patch_encoder = j.at("use_patch_encoder").get<bool>();
    c.patch_source_size = j.at("patch_source_size").get<int>();
    c.patch_channels = j.at("patch_channels").get<std::vector<int>>();
    c.decoder_blocks = j.at("decoder_blocks").get<int>();
    c.decoder_width = j.at("decoder_width").get<int>();
    c.use_output_skips = j.at("use_output_skips").get<bool>();
    c.use_aux_head = j.at("use_aux_head").get<bool>();
    c.pau_placement = placement_from(j.at("pau_placement").get<std::string>());
    c.bn_eps = j.at("bn_eps").get<double>();
    c.bn_momentum = j.at("bn_momentum").get<double>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    json manifest;
    manifest["config"] = config_to_json(params.config);
    json registry = json::array();
    std::size_t offset = 0;
    for (const ad::Param* p : params.all()) {
        registry.push_back(json{{"name", p->name},
                                {"shape", p->value.shape},
                                {"offset", offset},
                                {"trainable", p->trainable},
                                {"pau_group", p->pau_group}});
        offset += p->value.size() * sizeof(double);
    }
    manifest["tensors"] = std::move(registry);
    const std::string mtext = manifest.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path);
    out << "OSSCKPT1\n" << mtext.size() << "\n" << mtext;
    static_assert(sizeof(double) == 8);
    for (const ad::Param* p : params.all()) {
        out.write(reinterpret_cast<const char*>(p->value.data.data()),
                  static_cast<std::streamsize>(p->value.size() * sizeof(double)));
    }
    if (!out) throw IoError("checkpoint write failed: " + path);
}

std::shared_ptr<ModelParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    std::string magic;
    if (!std::getline(in, magic) || magic != "OSSCKPT1") {
        throw FormatError("bad checkpoint magic in " + path);
    }
    std::string len_line;
    if (!std::getline(in, len_line)) throw FormatError("missing manifest length in " + path);
    const std::size_t mlen = std::stoull(len_line);
    std::string mtext(mlen, '\0');
    in.read(mtext.data(), static_cast<std::streamsize>(mlen));
    if (static_cast<std::size_t>(in.gcount()) != mlen) {
        throw SizeError("truncated checkpoint manifest in " + path);
    }
    json manifest = json::parse(mtext);

    // Rebuild the parameter registry from a freshly initialized model so any
    // structural drift between config and tensor list is caught.
    OssNet model(config_from_json(manifest.at("config")), /*seed=*/0);
    auto params = model.shared_params();
    for (const json& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        if (!params->has(name)) throw FormatError("checkpoint tensor unknown to config: " + name);
        ad::Param& p = params->at(name);
        const auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != p.value.shape) throw ShapeError("checkpoint shape mismatch for " + name);
        in.seekg(static_cast<std::streamoff>(magic.size() + 1 + len_line.size() + 1 + mlen +
                                             entry.at("offset").get<std::size_t>()));
        in.read(reinterpret_cast<char*>(p.value.data.data()),
                static_cast<std::streamsize>(p.value.size() * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != p.value.size() * sizeof(double)) {
            throw SizeError("truncated checkpoint payload for " + name + " in " + path);
        }
    }
    return params;
}

}  // namespace oss
