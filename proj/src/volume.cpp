#include "oss/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace oss {

namespace {

void write_f32_le(std::ostream& out, const std::vector<float>& values) {
    // Assumes little-endian host (x86/arm64); static_assert guards IEEE-754.
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size() * 4));
}

std::vector<float> read_f32_le(std::istream& in, std::size_t count, const std::string& path) {
    std::vector<float> values(count);
    in.read(reinterpret_cast<char*>(values.data()), static_cast<std::streamsize>(count * 4));
    if (static_cast<std::size_t>(in.gcount()) != count * 4) {
        throw SizeError("OSV payload truncated in " + path + ": expected " +
                        std::to_string(count * 4) + " bytes");
    }
    return values;
}

}  // namespace

void save_volume(const Volume& volume, const std::string& path) {
    if (volume.data.size() != static_cast<std::size_t>(volume.channels) * volume.voxels()) {
        throw SizeError("volume data length does not match shape");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    char header[160];
    std::snprintf(header, sizeof(header), "%d %d %d %d %.17g %.17g %.17g\n",
                  volume.channels, volume.d, volume.h, volume.w,
                  volume.spacing[0], volume.spacing[1], volume.spacing[2]);
    out.write("OSV1", 4);
    out.write(header, static_cast<std::streamsize>(std::strlen(header)));
    write_f32_le(out, volume.data);
    if (!out) throw IoError("write failed: " + path);
}

Volume load_volume(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (in.gcount() != 4 || std::memcmp(magic, "OSV1", 4) != 0) {
        throw FormatError("bad OSV magic in " + path);
    }
    std::string header;
    if (!std::getline(in, header)) throw FormatError("missing OSV header in " + path);
    std::istringstream hs(header);
    Volume volume;
    if (!(hs >> volume.channels >> volume.d >> volume.h >> volume.w >>
          volume.spacing[0] >> volume.spacing[1] >> volume.spacing[2])) {
        throw FormatError("malformed OSV header in " + path + ": '" + header + "'");
    }
    std::string trailing;
    if (hs >> trailing) throw FormatError("trailing tokens in OSV header of " + path);
    if (volume.channels < 1 || volume.d < 1 || volume.h < 1 || volume.w < 1 ||
        volume.spacing[0] <= 0 || volume.spacing[1] <= 0 || volume.spacing[2] <= 0) {
        throw FormatError("invalid OSV dimensions in " + path);
    }
    const std::size_t count = static_cast<std::size_t>(volume.channels) * volume.voxels();
    volume.data = read_f32_le(in, count, path);
    // Extra bytes after the payload are a size violation as well.
    char extra;
    if (in.read(&extra, 1); in.gcount() != 0) {
        throw SizeError("OSV payload longer than header in " + path);
    }
    for (float v : volume.data) {
        if (!std::isfinite(v)) throw FormatError("non-finite value in " + path);
    }
    return volume;
}

void save_mask(const Mask& mask, const std::string& path) {
    Volume v(1, mask.d, mask.h, mask.w);
    for (std::size_t i = 0; i < mask.data.size(); ++i) v.data[i] = mask.data[i] ? 1.0f : 0.0f;
    save_volume(v, path);
}

Mask load_mask(const std::string& path) {
    const Volume v = load_volume(path);
    if (v.channels != 1) throw FormatError("mask must be single-channel: " + path);
    Mask mask(v.d, v.h, v.w);
    for (std::size_t i = 0; i < v.data.size(); ++i) {
        if (v.data[i] == 0.0f) {
            mask.data[i] = 0;
        } else if (v.data[i] == 1.0f) {
            mask.data[i] = 1;
        } else {
            throw FormatError("non-binary mask value in " + path);
        }
    }
    return mask;
}

std::vector<double> sample_trilinear(const Volume& volume, const Vec3& p) {
    std::vector<double> out(volume.channels);
    for (int c = 0; c < volume.channels; ++c) out[c] = sample_trilinear(volume, c, p);
    return out;
}

double sample_trilinear(const Volume& volume, int channel, const Vec3& p) {
    if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z)) {
        throw ArgumentError("non-finite sample location");
    }
    const int x0 = static_cast<int>(std::floor(p.x));
    const int y0 = static_cast<int>(std::floor(p.y));
    const int z0 = static_cast<int>(std::floor(p.z));
    const double fx = p.x - x0, fy = p.y - y0, fz = p.z - z0;
    double acc = 0.0;
    for (int dz = 0; dz < 2; ++dz) {
        const int z = z0 + dz;
        if (z < 0 || z >= volume.d) continue;
        const double wz = dz ? fz : 1.0 - fz;
        for (int dy = 0; dy < 2; ++dy) {
            const int y = y0 + dy;
            if (y < 0 || y >= volume.h) continue;
            const double wy = dy ? fy : 1.0 - fy;
            for (int dx = 0; dx < 2; ++dx) {
                const int x = x0 + dx;
                if (x < 0 || x >= volume.w) continue;
                const double wx = dx ? fx : 1.0 - fx;
                acc += wz * wy * wx * volume.at(channel, z, y, x);
            }
        }
    }
    return acc;
}

Volume downscale_avg(const Volume& volume, int factor) {
    if (factor < 1) throw ArgumentError("downscale factor must be >= 1");
    if (factor == 1) return volume;
    const auto ceil_div = [](int a, int b) { return (a + b - 1) / b; };
    const int od = ceil_div(volume.d, factor);
    const int oh = ceil_div(volume.h, factor);
    const int ow = ceil_div(volume.w, factor);
    Volume out(volume.channels, od, oh, ow);
    out.spacing = {volume.spacing[0] * factor, volume.spacing[1] * factor,
                   volume.spacing[2] * factor};
    const double inv = 1.0 / (static_cast<double>(factor) * factor * factor);
    for (int c = 0; c < volume.channels; ++c) {
        for (int z = 0; z < od; ++z) {
            for (int y = 0; y < oh; ++y) {
                for (int x = 0; x < ow; ++x) {
                    double acc = 0.0;
                    for (int bz = z * factor; bz < std::min((z + 1) * factor, volume.d); ++bz)
                        for (int by = y * factor; by < std::min((y + 1) * factor, volume.h); ++by)
                            for (int bx = x * factor; bx < std::min((x + 1) * factor, volume.w); ++bx)
                                acc += volume.at(c, bz, by, bx);
                    out.at(c, z, y, x) = static_cast<float>(acc * inv);
                }
            }
        }
    }
    return out;
}

std::pair<Volume, Mask> generate_phantom(const PhantomConfig& config) {
    if (config.resolution < 16) throw ArgumentError("phantom resolution must be >= 16");
    if (config.blob_radius_min <= 0 ||
        config.blob_radius_max < config.blob_radius_min ||
        2.0 * config.blob_radius_max >= config.resolution) {
        throw ArgumentError("phantom blob radius range must fit inside the volume");
    }
    if (config.num_blobs_min < 0 || config.num_blobs_max < config.num_blobs_min) {
        throw ArgumentError("invalid phantom blob count range");
    }
    if (config.channels < 1 || config.channels > 4) {
        throw ArgumentError("phantom channels must be in 1..4");
    }
    Rng rng(config.seed);
    const int res = config.resolution;
    const int nblobs = config.num_blobs_min +
        static_cast<int>(config.num_blobs_max > config.num_blobs_min
                             ? rng.uniform_index(static_cast<std::uint64_t>(
                                   config.num_blobs_max - config.num_blobs_min + 1))
                             : 0);
    struct Blob { double cx, cy, cz, r2; };
    std::vector<Blob> blobs;
    blobs.reserve(static_cast<std::size_t>(nblobs));
    const double margin = config.blob_radius_max;
    for (int i = 0; i < nblobs; ++i) {
        Blob b;
        b.cx = rng.uniform(margin, res - 1 - margin);
        b.cy = rng.uniform(margin, res - 1 - margin);
        b.cz = rng.uniform(margin, res - 1 - margin);
        const double r = rng.uniform(config.blob_radius_min, config.blob_radius_max);
        b.r2 = r * r;
        blobs.push_back(b);
    }

    Volume volume(config.channels, res, res, res);
    Mask mask(res, res, res);
    constexpr double kEps = 1e-9;
    for (int z = 0; z < res; ++z) {
        for (int y = 0; y < res; ++y) {
            for (int x = 0; x < res; ++x) {
                double field = 0.0;
                for (const Blob& b : blobs) {
                    const double dx = x - b.cx, dy = y - b.cy, dz = z - b.cz;
                    field += b.r2 / (dx * dx + dy * dy + dz * dz + kEps);
                }
                mask.at(z, y, x) = field >= 1.0 ? 1 : 0;
                const std::size_t vi = mask.index(z, y, x);
                const double s = field / (1.0 + field);
                for (int c = 0; c < config.channels; ++c) {
                    double base;
                    switch (c) {
                        case 0: base = s; break;
                        case 1: base = 1.0 - s; break;
                        case 2: base = std::tanh(field); break;
                        default: base = std::sqrt(s); break;
                    }
                    volume.data[static_cast<std::size_t>(c) * mask.voxels() + vi] =
                        static_cast<float>(base + config.noise_sigma * rng.normal());
                }
            }
        }
    }
    return {std::move(volume), std::move(mask)};
}

}  // namespace oss
