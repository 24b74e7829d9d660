#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "oss/model.hpp"
#include "oss/volume.hpp"

namespace oss {

// Batched occupancy field: probabilities in [0,1] for a list of grid-space
// locations (voxel centers sit at integer coordinates).
using OracleFn = std::function<std::vector<double>(const std::vector<Vec3>&)>;

// Counting wrapper around an occupancy field. Splits requests into chunks of
// at most `max_batch` points and tracks the total evaluation count and the
// largest chunk actually issued.
class OccupancyOracle {
public:
    OccupancyOracle(OracleFn fn, std::size_t max_batch = 4096);

    std::vector<double> operator()(const std::vector<Vec3>& points);

    std::size_t eval_count() const { return eval_count_; }
    std::size_t peak_batch() const { return peak_batch_; }
    std::size_t max_batch() const { return max_batch_; }
    void reset_counters();

private:
    OracleFn fn_;
    std::size_t max_batch_;
    std::size_t eval_count_ = 0;
    std::size_t peak_batch_ = 0;
};

// Analytic test field: sigmoid(sharpness * (radius - |p - center|)). A
// non-finite sharpness gives the hard indicator (1 inside, 0 outside, 0.5 on
// the surface).
OracleFn sphere_oracle(const Vec3& center, double radius, double sharpness);

// Occupancy field of a trained model over one volume. The global latent (and
// auxiliary head) is computed once; each batch maps extraction-grid
// coordinates at `resolution` onto the volume extent, extracts local patches
// and runs the decoder in inference mode.
OracleFn model_oracle(OssNet& model, const Volume& volume, int resolution);

struct ExtractionReport {
    std::string method;
    std::size_t eval_count = 0;
    std::size_t peak_batch = 0;
    std::vector<std::size_t> stage_evals;  // per octree level, coarse to fine
    std::size_t seeded_corners = 0;        // corners settled without evaluation
    double wall_ms = 0.0;

    std::string to_text() const;
    std::string to_json() const;
};

struct ExtractionResult {
    Mask mask;
    ExtractionReport report;
};

// Every voxel center evaluated once; mask = probability > 0.5.
ExtractionResult dense_extract(OccupancyOracle& oracle, int resolution);

// Multiresolution octree extraction. Corner lattice points of a coarse grid
// are evaluated first; cells whose eight corners agree are filled wholesale,
// disagreeing (active) cells are subdivided until single-voxel cells, whose
// centers are then evaluated directly. `init_resolution` must divide
// `resolution` with a power-of-two ratio.
ExtractionResult mise_extract(OccupancyOracle& oracle, int resolution, int init_resolution);

// Nearest-neighbour upsampling of a coarse binary grid onto a cubic cell grid.
std::vector<std::uint8_t> upsample_nearest(const std::vector<std::uint8_t>& coarse,
                                           const GridShape& coarse_shape, int resolution);

// Octree extraction seeded by a coarse occupancy grid (typically the model's
// auxiliary segmentation, thresholded at 0.5). Corner points whose incident
// seed cells are all occupied start as unevaluated occupied placeholders;
// placeholders touching an active cell are re-evaluated with the oracle until
// the active set is stable, so an over-dilated seed cannot corrupt the
// boundary. Interior placeholders never reach the oracle.
ExtractionResult seeded_extract(OccupancyOracle& oracle, int resolution, int init_resolution,
                                const std::vector<std::uint8_t>& seed,
                                const GridShape& seed_shape);

// Convenience wrapper: seed from the model's auxiliary head.
ExtractionResult seeded_extract(OccupancyOracle& oracle, OssNet& model, const Volume& volume,
                                int resolution, int init_resolution);

}  // namespace oss
