#include "oss/sampling.hpp"

#include <algorithm>
#include <cmath>

#include "oss/errors.hpp"

namespace oss {

std::vector<Vec3> sample_uniform(const GridShape& shape, std::size_t n, Rng& rng) {
    if (n < 1) throw ArgumentError("sample_uniform requires n >= 1");
    std::vector<Vec3> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Vec3 p;
        p.x = rng.uniform(0.0, static_cast<double>(shape.w));
        p.y = rng.uniform(0.0, static_cast<double>(shape.h));
        p.z = rng.uniform(0.0, static_cast<double>(shape.d));
        out.push_back(p);
    }
    return out;
}

namespace {

// Separable Chebyshev dilation: out[v] = max over the width-ball of in.
std::vector<std::uint8_t> dilate_chebyshev(const Mask& shape_ref,
                                           const std::vector<std::uint8_t>& in, int width) {
    const int d = shape_ref.d, h = shape_ref.h, w = shape_ref.w;
    std::vector<std::uint8_t> a = in, b(in.size());
    const auto pass = [&](int stride, int extent, int nlines, auto line_base) {
        for (int line = 0; line < nlines; ++line) {
            const std::size_t base = line_base(line);
            for (int i = 0; i < extent; ++i) {
                std::uint8_t m = 0;
                const int lo = std::max(0, i - width), hi = std::min(extent - 1, i + width);
                for (int j = lo; j <= hi && !m; ++j) m = a[base + static_cast<std::size_t>(j) * stride];
                b[base + static_cast<std::size_t>(i) * stride] = m;
            }
        }
        std::swap(a, b);
    };
    // x axis: lines indexed by (z, y)
    pass(1, w, d * h, [&](int line) { return static_cast<std::size_t>(line) * w; });
    // y axis: lines indexed by (z, x)
    pass(w, h, d * w, [&](int line) {
        const int z = line / w, x = line % w;
        return static_cast<std::size_t>(z) * h * w + x;
    });
    // z axis: lines indexed by (y, x)
    pass(h * w, d, h * w, [&](int line) { return static_cast<std::size_t>(line); });
    return a;
}

}  // namespace

Mask compute_border_band(const Mask& mask, int width) {
    if (width < 1) throw ArgumentError("border band width must be >= 1");
    std::vector<std::uint8_t> occ = mask.data, unocc(mask.data.size());
    for (std::size_t i = 0; i < unocc.size(); ++i) unocc[i] = occ[i] ? 0 : 1;
    const auto occ_near = dilate_chebyshev(mask, occ, width);
    const auto unocc_near = dilate_chebyshev(mask, unocc, width);
    Mask band(mask.d, mask.h, mask.w);
    for (std::size_t i = 0; i < band.data.size(); ++i) {
        // In the band iff an opposite-valued voxel lies within the width-ball.
        band.data[i] = mask.data[i] ? unocc_near[i] : occ_near[i];
    }
    return band;
}

int default_border_width(int resolution) {
    return std::max(2, static_cast<int>(std::lround(25.0 * resolution / 256.0)));
}

BorderSamples sample_border(const Mask& mask, int width, std::size_t n, Rng& rng) {
    if (n < 1) throw ArgumentError("sample_border requires n >= 1");
    const GridShape shape{mask.d, mask.h, mask.w};
    const Mask band = compute_border_band(mask, width);
    std::vector<std::size_t> band_voxels;
    for (std::size_t i = 0; i < band.data.size(); ++i)
        if (band.data[i]) band_voxels.push_back(i);

    BorderSamples out;
    if (band_voxels.empty()) {
        out.locations = sample_uniform(shape, n, rng);
        out.uniform_fallback = true;
        return out;
    }
    const std::size_t n_uniform = (n + 1) / 2;
    const std::size_t n_band = n / 2;
    out.locations = sample_uniform(shape, n_uniform, rng);
    for (std::size_t i = 0; i < n_band; ++i) {
        const std::size_t vi = band_voxels[rng.uniform_index(band_voxels.size())];
        const int x = static_cast<int>(vi % mask.w);
        const int y = static_cast<int>((vi / mask.w) % mask.h);
        const int z = static_cast<int>(vi / (static_cast<std::size_t>(mask.w) * mask.h));
        Vec3 p;
        // Uniform within the voxel cell, clamped so the nearest center stays
        // the chosen band voxel.
        p.x = std::clamp(x + rng.uniform(-0.5, 0.5), 0.0, mask.w - 1 + 0.499);
        p.y = std::clamp(y + rng.uniform(-0.5, 0.5), 0.0, mask.h - 1 + 0.499);
        p.z = std::clamp(z + rng.uniform(-0.5, 0.5), 0.0, mask.d - 1 + 0.499);
        out.locations.push_back(p);
    }
    return out;
}

Patch extract_patch(const Volume& volume, const Vec3& p, int source_size) {
    if (source_size != 7 && source_size != 14) {
        throw ArgumentError("patch source_size must be 7 or 14");
    }
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
        throw ArgumentError("non-finite patch location");
    }
    Patch patch;
    patch.channels = volume.channels;
    patch.source_size = source_size;
    patch.values.assign(static_cast<std::size_t>(volume.channels) * 343, 0.0);
    if (source_size == 7) {
        for (int c = 0; c < volume.channels; ++c)
            for (int z = 0; z < 7; ++z)
                for (int y = 0; y < 7; ++y)
                    for (int x = 0; x < 7; ++x)
                        patch.values[patch.index(c, z, y, x)] = sample_trilinear(
                            volume, c, {p.x + x - 3, p.y + y - 3, p.z + z - 3});
        return patch;
    }
    // 14^3 lattice of unit spacing centered at p, then 2^3 average pooling.
    for (int c = 0; c < volume.channels; ++c) {
        for (int z = 0; z < 7; ++z) {
            for (int y = 0; y < 7; ++y) {
                for (int x = 0; x < 7; ++x) {
                    double acc = 0.0;
                    for (int dz = 0; dz < 2; ++dz)
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += sample_trilinear(
                                    volume, c,
                                    {p.x + (2 * x + dx) - 6.5, p.y + (2 * y + dy) - 6.5,
                                     p.z + (2 * z + dz) - 6.5});
                    patch.values[patch.index(c, z, y, x)] = acc / 8.0;
                }
            }
        }
    }
    return patch;
}

std::uint8_t lookup_label(const Mask& mask, const Vec3& p) {
    const int x = std::clamp(static_cast<int>(std::lround(p.x)), 0, mask.w - 1);
    const int y = std::clamp(static_cast<int>(std::lround(p.y)), 0, mask.h - 1);
    const int z = std::clamp(static_cast<int>(std::lround(p.z)), 0, mask.d - 1);
    return mask.at(z, y, x);
}

std::vector<std::uint8_t> lookup_labels(const Mask& mask, const std::vector<Vec3>& locations) {
    std::vector<std::uint8_t> labels;
    labels.reserve(locations.size());
    for (const Vec3& p : locations) labels.push_back(lookup_label(mask, p));
    return labels;
}

SampleBatch make_batch(const Volume& volume, const Mask& mask, SamplingStrategy strategy,
                       int border_width, std::size_t n, int patch_source_size, Rng& rng,
                       bool with_patches) {
    SampleBatch batch;
    if (strategy == SamplingStrategy::Uniform) {
        batch.locations = sample_uniform({volume.d, volume.h, volume.w}, n, rng);
    } else {
        BorderSamples bs = sample_border(mask, border_width, n, rng);
        batch.locations = std::move(bs.locations);
        batch.uniform_fallback = bs.uniform_fallback;
    }
    batch.labels = lookup_labels(mask, batch.locations);
    if (with_patches) {
        batch.patches.reserve(batch.locations.size());
        for (const Vec3& p : batch.locations)
            batch.patches.push_back(extract_patch(volume, p, patch_source_size));
    }
    return batch;
}

}  // namespace oss
