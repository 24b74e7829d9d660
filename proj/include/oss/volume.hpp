#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "oss/errors.hpp"
#include "oss/rng.hpp"

namespace oss {

// Continuous 3D location in voxel units. Voxel (x, y, z) has its center at
// coordinate (x, y, z); x is the fastest-varying storage axis.
struct Vec3 {
    double x = 0.0, y = 0.0, z = 0.0;
};

// Dense multi-channel scalar field. Data layout: channel-major, then
// z (slowest), y, x (fastest). Values are stored as 32-bit floats matching
// the on-disk OSV payload bit-exactly.
struct Volume {
    int channels = 1;
    int d = 0, h = 0, w = 0;
    std::array<double, 3> spacing = {1.0, 1.0, 1.0};
    std::vector<float> data;

    Volume() = default;
    Volume(int channels_, int d_, int h_, int w_)
        : channels(channels_), d(d_), h(h_), w(w_),
          data(static_cast<std::size_t>(channels_) * d_ * h_ * w_, 0.0f) {}

    std::size_t voxels() const { return static_cast<std::size_t>(d) * h * w; }

    std::size_t index(int c, int z, int y, int x) const {
        return ((static_cast<std::size_t>(c) * d + z) * h + y) * w + x;
    }
    float at(int c, int z, int y, int x) const { return data[index(c, z, y, x)]; }
    float& at(int c, int z, int y, int x) { return data[index(c, z, y, x)]; }
};

// Binary occupancy grid with the same shape contract as a single-channel
// Volume.
struct Mask {
    int d = 0, h = 0, w = 0;
    std::vector<std::uint8_t> data;

    Mask() = default;
    Mask(int d_, int h_, int w_)
        : d(d_), h(h_), w(w_), data(static_cast<std::size_t>(d_) * h_ * w_, 0) {}

    std::size_t voxels() const { return static_cast<std::size_t>(d) * h * w; }

    std::size_t index(int z, int y, int x) const {
        return (static_cast<std::size_t>(z) * h + y) * w + x;
    }
    std::uint8_t at(int z, int y, int x) const { return data[index(z, y, x)]; }
    std::uint8_t& at(int z, int y, int x) { return data[index(z, y, x)]; }

    std::size_t count() const {
        std::size_t n = 0;
        for (auto v : data) n += v;
        return n;
    }
};

// Configuration for the synthetic metaball phantoms standing in for medical
// scans at desk scale.
struct PhantomConfig {
    int resolution = 64;
    int num_blobs_min = 2;
    int num_blobs_max = 4;
    double blob_radius_min = 6.0;
    double blob_radius_max = 12.0;
    double noise_sigma = 0.05;
    int channels = 2;  // 1..4 to mimic multi-modal input
    std::uint64_t seed = 0;
};

// --- OSV file I/O -----------------------------------------------------------
// Container: magic "OSV1", UTF-8 header line "channels D H W sx sy sz\n",
// payload of channels*D*H*W little-endian IEEE-754 32-bit floats.

void save_volume(const Volume& volume, const std::string& path);
Volume load_volume(const std::string& path);

void save_mask(const Mask& mask, const std::string& path);
Mask load_mask(const std::string& path);

// --- Sampling / resampling --------------------------------------------------

// Trilinear blend of the 8 voxel centers surrounding `p`, per channel.
// Out-of-bounds reads are zero (zero padding). Throws ArgumentError on
// non-finite locations.
std::vector<double> sample_trilinear(const Volume& volume, const Vec3& p);

// Single-channel variant.
double sample_trilinear(const Volume& volume, int channel, const Vec3& p);

// Average-pool by `factor` per spatial axis; dims not divisible by the factor
// are zero-padded to the next multiple first.
Volume downscale_avg(const Volume& volume, int factor);

// Deterministic metaball phantom: mask is the thresholded metaball field,
// volume channels are smooth field transforms plus Gaussian noise.
std::pair<Volume, Mask> generate_phantom(const PhantomConfig& config);

}  // namespace oss
