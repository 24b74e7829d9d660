#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "oss/model.hpp"
#include "oss/sampling.hpp"

namespace oss {

struct TrainConfig {
    int epochs = 50;
    int batch_volumes = 2;          // k
    std::size_t n_locations = 1 << 14;
    SamplingStrategy sampling = SamplingStrategy::Uniform;
    double alpha = 0.1;             // aux loss weight
    double base_lr = 3e-4;
    double pau_lr = 1e-2;
    std::vector<int> decay_epochs = {20, 30};
    int lookahead_k = 5;
    double lookahead_alpha = 0.8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::size_t n_val = 1 << 17;
    int border_width = -1;          // -1: default_border_width(resolution)
    std::uint64_t seed = 0;

    void validate() const;
};

// --- Losses -----------------------------------------------------------------

// Mean BCE over probabilities clamped to [1e-7, 1-1e-7].
double bce(const std::vector<double>& probs, const std::vector<double>& labels);

// bce(main) + alpha * bce(aux); the aux term is 0 when aux is absent.
double total_loss(const std::vector<double>& probs, const std::vector<double>& labels,
                  const std::vector<double>& aux_probs, const std::vector<double>& aux_labels,
                  double alpha);

// Ground-truth mask max-pooled onto the aux grid: a block is occupied if any
// of its voxels is occupied.
std::vector<double> aux_labels_maxpool(const Mask& mask, const GridShape& aux_shape);

// --- Optimizer --------------------------------------------------------------

// RAdam with a Lookahead wrapper (slow weights synchronized every k steps).
class Optimizer {
public:
    Optimizer(std::vector<ad::Param*> params, const TrainConfig& config);

    // One RAdam update from accumulated gradients, followed by the Lookahead
    // synchronization when due. Learning rates per group, decayed by epoch.
    void step(int epoch);

    // Inner step counter (shared by RAdam bias correction and Lookahead).
    std::int64_t steps() const { return step_count_; }

private:
    struct State {
        ad::Param* param;
        std::vector<double> m, v, slow;
    };
    std::vector<State> states_;
    TrainConfig config_;
    std::int64_t step_count_ = 0;
};

// Single-tensor RAdam update, exposed for the optimizer trace oracles.
struct RAdamState {
    std::vector<double> m, v;
    std::int64_t t = 0;
};
void radam_step(std::vector<double>& param, const std::vector<double>& grad, RAdamState& state,
                double lr, double beta1, double beta2, double eps);

// Lookahead interpolation applied every k-th inner step.
struct LookaheadState {
    std::vector<double> slow;
    std::int64_t t = 0;
};
void lookahead_step(std::vector<double>& fast, LookaheadState& state, int k, double alpha);

// Step-wise decay: full rate before the first decay epoch, /10 after each one.
double lr_schedule(int epoch, double base_lr, const std::vector<int>& decay_epochs);

// --- Validation & training --------------------------------------------------

struct ValidationResult {
    double iou = 0.0;
    double dice = 0.0;
};

struct VolumeSample {
    Volume volume;
    Mask mask;
    std::string name;
};

// Sampled-point validation: n_val uniform locations per volume, predictions
// thresholded at 0.5, IoU/Dice against sampled labels, dataset means.
ValidationResult validate(OssNet& model, const std::vector<VolumeSample>& dataset,
                          std::size_t n_val, Rng& rng);

struct EpochRecord {
    int epoch = 0;
    int step = 0;
    double loss = 0.0;
    double iou = 0.0;
    double dice = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> log;
    double best_dice = 0.0;
    int best_epoch = -1;
};

// Full training loop. Writes newline-delimited `epoch step loss iou dice lr`
// records to `metrics_path` (when non-empty) and the best-validation
// checkpoint to `checkpoint_path` (when non-empty).
TrainResult train(const TrainConfig& config, OssNet& model,
                  const std::vector<VolumeSample>& train_set,
                  const std::vector<VolumeSample>& val_set, const std::string& checkpoint_path,
                  const std::string& metrics_path);

}  // namespace oss
