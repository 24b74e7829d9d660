#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oss/extract.hpp"
#include "oss/train.hpp"

namespace oss {

// Extraction eval-count / runtime sweep over the per-batch location cap.
struct BatchSweepRow {
    std::size_t max_batch = 0;
    std::size_t octree_evals = 0;
    std::size_t seeded_evals = 0;
    double octree_ms = 0.0;
    double seeded_ms = 0.0;
};

struct BatchSweepResult {
    std::vector<BatchSweepRow> rows;
    bool outputs_identical = true;  // masks bit-identical across all caps

    std::string to_text() const;
};

BatchSweepResult sweep_max_batch(OssNet& model, const Volume& volume,
                                 const std::vector<std::size_t>& batch_values, int resolution,
                                 int init_resolution);

// Decoder forward cost and memory proxy vs number of sampled locations. The
// proxy counts bytes of location + patch payload held at once, which is
// monotone in the device-memory footprint of a full forward pass.
struct LocationSweepRow {
    std::size_t n_locations = 0;
    double wall_ms = 0.0;
    std::size_t memory_proxy_bytes = 0;
};

struct LocationSweepResult {
    std::vector<LocationSweepRow> rows;

    std::string to_text() const;
};

LocationSweepResult sweep_locations(OssNet& model, const Volume& volume,
                                    const std::vector<std::size_t>& counts, Rng& rng);

// Sampling-strategy comparison: {uniform, border} x location counts, trained
// once per seed, best run reported per row.
struct SamplingRow {
    SamplingStrategy strategy = SamplingStrategy::Uniform;
    std::size_t n_locations = 0;
    std::vector<double> iou_runs;
    std::vector<double> dice_runs;
    double best_iou = 0.0;
    double best_dice = 0.0;
};

struct SamplingResult {
    std::vector<SamplingRow> rows;

    std::string to_text() const;
};

SamplingResult compare_sampling(const TrainConfig& base_config, const OssNetConfig& model_config,
                                const std::vector<VolumeSample>& train_set,
                                const std::vector<VolumeSample>& val_set,
                                const std::vector<std::size_t>& location_counts,
                                const std::vector<std::uint64_t>& seeds);

// Seeded vs plain octree extraction on held-out volumes.
struct InferenceRow {
    std::string name;
    std::size_t octree_evals = 0;
    std::size_t seeded_evals = 0;
    double octree_ms = 0.0;
    double seeded_ms = 0.0;
    double disagreement = 0.0;  // seeded vs octree mask, voxel fraction
    double seed_iou = 0.0;      // aux seed vs ground truth at mask resolution
};

struct InferenceResult {
    std::vector<InferenceRow> rows;
    double mean_eval_ratio = 0.0;   // seeded / octree, deterministic
    double mean_speed_ratio = 0.0;  // octree_ms / seeded_ms, informational

    std::string to_text() const;
};

InferenceResult compare_inference(OssNet& model, const std::vector<VolumeSample>& volumes,
                                  int resolution, int init_resolution, std::size_t max_batch);

}  // namespace oss
