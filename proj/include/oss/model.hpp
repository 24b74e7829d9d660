#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "oss/autodiff.hpp"
#include "oss/sampling.hpp"
#include "oss/volume.hpp"

namespace oss {

enum class PauPlacement { None, Decoder, Encoder, Both };

// Network topology. Desk defaults are sized for CPU-scale training and
// finite-difference verification; the paper-scale widths stay available via
// paper_scale().
struct OssNetConfig {
    int in_channels = 2;
    int downscale_factor = 2;

    int encoder_stages = 4;
    std::vector<int> encoder_channels = {4, 6, 8, 10};
    int latent_dim = 16;

    bool use_patch_encoder = true;
    int patch_source_size = 7;  // 7 or 14 (pooled to 7)
    std::vector<int> patch_channels = {4, 4};

    int decoder_blocks = 5;
    int decoder_width = 32;

    bool use_output_skips = true;
    bool use_aux_head = true;
    PauPlacement pau_placement = PauPlacement::Decoder;

    double bn_eps = 1e-5;
    double bn_momentum = 0.1;
    double leaky_slope = 0.01;

    // Table-2 style presets: 'O' = O-Net baseline (no patches, no skips/aux),
    // 'A' = 7^3 patches, 'B' = 14^3 pooled patches, 'C' = A + skips & aux,
    // 'D' = B + skips & aux.
    static OssNetConfig variant(char which, int in_channels = 2);

    // Paper-width decoder (512 features, 5 blocks) for shape-only exercises.
    static OssNetConfig paper_scale(int in_channels = 4);

    int local_latent_dim() const;
    int decoder_input_dim() const;
    void validate() const;
};

// All learnable tensors plus batch-norm running statistics, keyed by name.
class ModelParams {
public:
    OssNetConfig config;

    ad::Param& add(const std::string& name, std::vector<int> shape, bool trainable = true,
                   bool pau_group = false);
    ad::Param& at(const std::string& name);
    const ad::Param& at(const std::string& name) const;
    bool has(const std::string& name) const { return by_name_.count(name) != 0; }

    std::vector<ad::Param*> all();
    std::vector<const ad::Param*> all() const;
    std::vector<ad::Param*> trainable();
    void zero_grads();

private:
    std::deque<ad::Param> storage_;
    std::map<std::string, ad::Param*> by_name_;
};

struct AuxSegmentation {
    GridShape shape;
    std::vector<double> probs;  // sigmoid outputs in [0,1], z/y/x order
    bool present = false;
};

struct ForwardResult {
    std::vector<double> probs;  // per location
    AuxSegmentation aux;
};

// OSS-Net: 3D CNN encoder with optional output skips and auxiliary
// segmentation head, two-conv patch encoder, residual fully connected
// occupancy decoder with conditional batch normalization.
class OssNet {
public:
    OssNet(const OssNetConfig& config, std::uint64_t seed);
    explicit OssNet(std::shared_ptr<ModelParams> params);

    const OssNetConfig& config() const { return params_->config; }
    ModelParams& params() { return *params_; }
    const ModelParams& params() const { return *params_; }
    std::shared_ptr<ModelParams> shared_params() { return params_; }

    // Downscaled global observation as a [1,C,D,H,W] tensor.
    ad::Tensor prepare_global_input(const Volume& volume) const;
    // Patch batch as a [N,C,7,7,7] tensor.
    static ad::Tensor pack_patches(const std::vector<Patch>& patches);
    // Location normalization to [-1,1]^3 given the source volume shape.
    static ad::Tensor normalize_locations(const std::vector<Vec3>& locations,
                                          const GridShape& shape);

    struct GlobalEncoding {
        ad::NodePtr latent;  // [1, latent_dim]
        ad::NodePtr aux;     // [1,1,d,h,w] sigmoid probabilities, null without aux head
        GridShape aux_shape;
    };
    GlobalEncoding encode_global(ad::Tape& tape, const ad::Tensor& input, ad::Mode mode);

    // [N, local_latent_dim]
    ad::NodePtr encode_patches(ad::Tape& tape, const ad::Tensor& patches);

    // [N] occupancy probabilities. The global latent is either one shared
    // row [1,L] or one row per location [N,L] (mixed-volume batches).
    ad::NodePtr decode_occupancy(ad::Tape& tape, const ad::Tensor& normalized_locations,
                                 const ad::NodePtr& global_latent, const ad::NodePtr& local_latents,
                                 ad::Mode mode);

    // Composed forward for one volume and its sample batch.
    ForwardResult forward(const Volume& volume, const SampleBatch& batch, ad::Mode mode);

    // Graph-building variant used by the training loop (loss is built on the
    // same tape). Returns the probability node, aux node and aux shape.
    struct ForwardNodes {
        ad::NodePtr probs;
        ad::NodePtr aux;
        GridShape aux_shape;
    };
    ForwardNodes forward_nodes(ad::Tape& tape, const Volume& volume, const SampleBatch& batch,
                               ad::Mode mode);

    // Aux segmentation alone (used for the encoder-seeded extraction).
    AuxSegmentation predict_aux(const Volume& volume);

    GridShape aux_grid_shape(const GridShape& volume_shape) const;

private:
    std::shared_ptr<ModelParams> params_;

    ad::NodePtr activation(ad::Tape& tape, const ad::NodePtr& x, bool decoder_side,
                           const std::string& pau_name);
    ad::NodePtr cbn(ad::Tape& tape, const ad::NodePtr& x, const ad::NodePtr& latent,
                    const std::string& name, ad::Mode mode);
    void build_params(std::uint64_t seed);
};

}  // namespace oss
