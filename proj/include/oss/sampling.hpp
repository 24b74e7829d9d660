#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "oss/rng.hpp"
#include "oss/volume.hpp"

namespace oss {

// Local cubic observation centered at a location. `values` holds
// channels * 7^3 reals (14^3 sources are average-pooled to 7^3 on extraction).
struct Patch {
    int channels = 0;
    int source_size = 7;  // 7 or 14
    std::vector<double> values;

    static constexpr int kSize = 7;
    std::size_t index(int c, int z, int y, int x) const {
        return ((static_cast<std::size_t>(c) * kSize + z) * kSize + y) * kSize + x;
    }
};

// One training/validation batch for a single volume.
struct SampleBatch {
    std::vector<Vec3> locations;
    std::vector<Patch> patches;
    std::vector<std::uint8_t> labels;
    std::string volume_ref;
    bool uniform_fallback = false;  // set when border sampling found an empty band
};

struct GridShape {
    int d = 0, h = 0, w = 0;
};

// n i.i.d. locations uniform over the continuous extent [0, W) x [0, H) x [0, D).
std::vector<Vec3> sample_uniform(const GridShape& shape, std::size_t n, Rng& rng);

// Voxels within Chebyshev distance <= width of an opposite-valued voxel, i.e.
// a band of the given width on both sides of the mask boundary. An empty or
// full mask has no boundary and yields an empty band.
Mask compute_border_band(const Mask& mask, int width);

// ceil(n/2) locations uniform over the whole volume plus floor(n/2) uniform
// within the border band. Falls back to fully uniform (with the warning flag
// in the returned pair) when the band is empty.
struct BorderSamples {
    std::vector<Vec3> locations;
    bool uniform_fallback = false;
};
BorderSamples sample_border(const Mask& mask, int width, std::size_t n, Rng& rng);

// Desk-scale default band width, preserving the paper-scale band proportion.
int default_border_width(int resolution);

// Trilinear samples on a source_size^3 unit lattice centered at `p`;
// source_size 14 is 2^3 average-pooled down to 7^3. Zero padding outside.
Patch extract_patch(const Volume& volume, const Vec3& p, int source_size);

// Label of the nearest voxel center (coordinates clamped to the grid).
std::vector<std::uint8_t> lookup_labels(const Mask& mask, const std::vector<Vec3>& locations);
std::uint8_t lookup_label(const Mask& mask, const Vec3& p);

// Full batch assembly for one volume under the given strategy.
enum class SamplingStrategy { Uniform, Border };
SampleBatch make_batch(const Volume& volume, const Mask& mask, SamplingStrategy strategy,
                       int border_width, std::size_t n, int patch_source_size, Rng& rng,
                       bool with_patches = true);

}  // namespace oss
