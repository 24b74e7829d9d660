#include "oss/extract.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace oss {

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

void check_resolutions(int resolution, int init_resolution) {
    if (resolution <= 0) throw ArgumentError("extraction resolution must be positive");
    if (init_resolution <= 0 || init_resolution > resolution ||
        resolution % init_resolution != 0 || !power_of_two(resolution / init_resolution)) {
        throw ArgumentError("initial resolution must divide the final one by a power of two");
    }
}

}  // namespace

OccupancyOracle::OccupancyOracle(OracleFn fn, std::size_t max_batch)
    : fn_(std::move(fn)), max_batch_(max_batch) {
    if (!fn_) throw ArgumentError("null occupancy field");
    if (max_batch_ == 0) throw ArgumentError("max_batch must be positive");
}

std::vector<double> OccupancyOracle::operator()(const std::vector<Vec3>& points) {
    std::vector<double> out;
    out.reserve(points.size());
    for (std::size_t start = 0; start < points.size(); start += max_batch_) {
        const std::size_t n = std::min(max_batch_, points.size() - start);
        std::vector<Vec3> chunk(points.begin() + static_cast<std::ptrdiff_t>(start),
                                points.begin() + static_cast<std::ptrdiff_t>(start + n));
        std::vector<double> probs = fn_(chunk);
        if (probs.size() != n) throw SizeError("occupancy field returned wrong batch size");
        for (double p : probs) {
            if (!std::isfinite(p)) throw NumericError("non-finite occupancy probability");
            out.push_back(p);
        }
        eval_count_ += n;
        peak_batch_ = std::max(peak_batch_, n);
    }
    return out;
}

void OccupancyOracle::reset_counters() {
    eval_count_ = 0;
    peak_batch_ = 0;
}

OracleFn sphere_oracle(const Vec3& center, double radius, double sharpness) {
    if (radius < 0.0) throw ArgumentError("sphere radius must be non-negative");
    const bool hard = !std::isfinite(sharpness);
    return [=](const std::vector<Vec3>& points) {
        std::vector<double> out(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            const double dx = points[i].x - center.x;
            const double dy = points[i].y - center.y;
            const double dz = points[i].z - center.z;
            const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
            if (hard) {
                out[i] = dist < radius ? 1.0 : (dist > radius ? 0.0 : 0.5);
            } else {
                out[i] = 1.0 / (1.0 + std::exp(-sharpness * (radius - dist)));
            }
        }
        return out;
    };
}

OracleFn model_oracle(OssNet& model, const Volume& volume, int resolution) {
    if (resolution <= 0) throw ArgumentError("extraction resolution must be positive");
    // One-time global pass; only the latent vector survives the tape.
    ad::Tensor latent;
    {
        ad::Tape tape(/*record_grad=*/false);
        latent = model.encode_global(tape, model.prepare_global_input(volume), ad::Mode::Eval)
                     .latent->val;
    }
    const GridShape shape{volume.d, volume.h, volume.w};
    const double fz = static_cast<double>(volume.d) / resolution;
    const double fy = static_cast<double>(volume.h) / resolution;
    const double fx = static_cast<double>(volume.w) / resolution;
    auto* model_ptr = &model;
    const Volume* volume_ptr = &volume;
    return [=](const std::vector<Vec3>& points) {
        std::vector<Vec3> vol_points(points.size());
        for (std::size_t i = 0; i < points.size(); ++i) {
            vol_points[i] = {(points[i].x + 0.5) * fx - 0.5, (points[i].y + 0.5) * fy - 0.5,
                             (points[i].z + 0.5) * fz - 0.5};
        }
        ad::Tape tape(/*record_grad=*/false);
        ad::NodePtr local;
        if (model_ptr->config().use_patch_encoder) {
            std::vector<Patch> patches;
            patches.reserve(vol_points.size());
            for (const Vec3& p : vol_points) {
                patches.push_back(
                    extract_patch(*volume_ptr, p, model_ptr->config().patch_source_size));
            }
            local = model_ptr->encode_patches(tape, OssNet::pack_patches(patches));
        }
        ad::NodePtr probs = model_ptr->decode_occupancy(
            tape, OssNet::normalize_locations(vol_points, shape), tape.constant(latent), local,
            ad::Mode::Eval);
        return probs->val.data;
    };
}

std::string ExtractionReport::to_text() const {
    std::ostringstream out;
    out << "method=" << method << " evals=" << eval_count << " peak_batch=" << peak_batch;
    if (!stage_evals.empty()) {
        out << " stages=";
        for (std::size_t i = 0; i < stage_evals.size(); ++i) {
            if (i) out << ',';
            out << stage_evals[i];
        }
    }
    if (seeded_corners > 0) out << " seeded_corners=" << seeded_corners;
    out << " wall_ms=" << wall_ms;
    return out.str();
}

std::string ExtractionReport::to_json() const {
    nlohmann::json j{{"method", method},
                     {"eval_count", eval_count},
                     {"peak_batch", peak_batch},
                     {"stage_evals", stage_evals},
                     {"seeded_corners", seeded_corners},
                     {"wall_ms", wall_ms}};
    return j.dump();
}

ExtractionResult dense_extract(OccupancyOracle& oracle, int resolution) {
    if (resolution <= 0) throw ArgumentError("extraction resolution must be positive");
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t before = oracle.eval_count();
    Mask mask;
    mask.d = mask.h = mask.w = resolution;
    mask.data.assign(static_cast<std::size_t>(resolution) * resolution * resolution, 0);

    std::vector<Vec3> points;
    points.reserve(mask.data.size());
    for (int z = 0; z < resolution; ++z) {
        for (int y = 0; y < resolution; ++y) {
            for (int x = 0; x < resolution; ++x) {
                points.push_back({static_cast<double>(x), static_cast<double>(y),
                                  static_cast<double>(z)});
            }
        }
    }
    const std::vector<double> probs = oracle(points);
    for (std::size_t i = 0; i < probs.size(); ++i) mask.data[i] = probs[i] > 0.5 ? 1 : 0;

    ExtractionReport report;
    report.method = "dense";
    report.eval_count = oracle.eval_count() - before;
    report.peak_batch = oracle.peak_batch();
    report.stage_evals = {report.eval_count};
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                               t0)
                         .count();
    return {std::move(mask), std::move(report)};
}

std::vector<std::uint8_t> upsample_nearest(const std::vector<std::uint8_t>& coarse,
                                           const GridShape& coarse_shape, int resolution) {
    if (coarse_shape.d <= 0 || coarse_shape.h <= 0 || coarse_shape.w <= 0) {
        throw ShapeError("coarse grid must be non-empty");
    }
    if (coarse.size() != static_cast<std::size_t>(coarse_shape.d) * coarse_shape.h *
                             coarse_shape.w) {
        throw ShapeError("coarse grid size mismatch");
    }
    std::vector<std::uint8_t> out(static_cast<std::size_t>(resolution) * resolution * resolution);
    for (int z = 0; z < resolution; ++z) {
        const int cz = static_cast<int>(static_cast<std::int64_t>(z) * coarse_shape.d / resolution);
        for (int y = 0; y < resolution; ++y) {
            const int cy =
                static_cast<int>(static_cast<std::int64_t>(y) * coarse_shape.h / resolution);
            for (int x = 0; x < resolution; ++x) {
                const int cx =
                    static_cast<int>(static_cast<std::int64_t>(x) * coarse_shape.w / resolution);
                out[(static_cast<std::size_t>(z) * resolution + y) * resolution + x] =
                    coarse[(static_cast<std::size_t>(cz) * coarse_shape.h + cy) * coarse_shape.w +
                           cx];
            }
        }
    }
    return out;
}

namespace {

// Shared octree driver. Corner lattice points live on grid boundaries
// (coordinate b - 0.5 for b in [0, T]); their occupancy is cached in `corner`
// with -1 = unknown, 0/1 = evaluated, 2 = occupied placeholder from a seed.
ExtractionResult octree_extract(OccupancyOracle& oracle, int resolution, int init_resolution,
                                const std::vector<std::uint8_t>* seed) {
    check_resolutions(resolution, init_resolution);
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t before = oracle.eval_count();
    const int T = resolution;
    const int B = T + 1;

    std::vector<std::int8_t> corner(static_cast<std::size_t>(B) * B * B, -1);
    auto corner_at = [&](int bz, int by, int bx) -> std::int8_t& {
        return corner[(static_cast<std::size_t>(bz) * B + by) * B + bx];
    };

    ExtractionReport report;
    report.method = seed ? "seeded" : "octree";

    // Seed placeholders: a corner of the initial grid whose incident seed
    // cells (out-of-grid counts as free) are all occupied is assumed occupied
    // until an active cell forces a real evaluation.
    const int s0 = T / init_resolution;
    if (seed) {
        const int R0 = init_resolution;
        auto seed_at = [&](int cz, int cy, int cx) -> bool {
            if (cz < 0 || cy < 0 || cx < 0 || cz >= R0 || cy >= R0 || cx >= R0) return false;
            return (*seed)[(static_cast<std::size_t>(cz) * R0 + cy) * R0 + cx] != 0;
        };
        for (int bz = 0; bz <= R0; ++bz) {
            for (int by = 0; by <= R0; ++by) {
                for (int bx = 0; bx <= R0; ++bx) {
                    bool all = true;
                    for (int dz = -1; dz <= 0 && all; ++dz) {
                        for (int dy = -1; dy <= 0 && all; ++dy) {
                            for (int dx = -1; dx <= 0 && all; ++dx) {
                                all = seed_at(bz + dz, by + dy, bx + dx);
                            }
                        }
                    }
                    if (all) {
                        corner_at(bz * s0, by * s0, bx * s0) = 2;
                        report.seeded_corners += 1;
                    }
                }
            }
        }
    }

    Mask mask;
    mask.d = mask.h = mask.w = T;
    mask.data.assign(static_cast<std::size_t>(T) * T * T, 0);
    auto fill_block = [&](int z0, int y0, int x0, int s, std::uint8_t value) {
        for (int z = z0; z < z0 + s; ++z) {
            for (int y = y0; y < y0 + s; ++y) {
                std::fill_n(mask.data.begin() +
                                (static_cast<std::size_t>(z) * T + y) * T + x0,
                            s, value);
            }
        }
    };

    auto evaluate_corners = [&](const std::vector<std::array<int, 3>>& keys) {
        if (keys.empty()) return;
        std::vector<Vec3> points;
        points.reserve(keys.size());
        for (const auto& k : keys) {
            points.push_back({k[2] - 0.5, k[1] - 0.5, k[0] - 0.5});
        }
        const std::vector<double> probs = oracle(points);
        for (std::size_t i = 0; i < keys.size(); ++i) {
            corner_at(keys[i][0], keys[i][1], keys[i][2]) = probs[i] > 0.5 ? 1 : 0;
        }
    };

    struct Cell {
        int z, y, x;
    };
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(init_resolution) * init_resolution * init_resolution);
    for (int z = 0; z < init_resolution; ++z) {
        for (int y = 0; y < init_resolution; ++y) {
            for (int x = 0; x < init_resolution; ++x) cells.push_back({z, y, x});
        }
    }

    int R = init_resolution;
    while (true) {
        const int s = T / R;
        const std::size_t level_before = oracle.eval_count();

        // Evaluate corners of this level's cells that are still unknown.
        std::vector<std::array<int, 3>> unknown;
        for (const Cell& c : cells) {
            for (int dz = 0; dz <= 1; ++dz) {
                for (int dy = 0; dy <= 1; ++dy) {
                    for (int dx = 0; dx <= 1; ++dx) {
                        const int bz = (c.z + dz) * s, by = (c.y + dy) * s, bx = (c.x + dx) * s;
                        if (corner_at(bz, by, bx) == -1) {
                            corner_at(bz, by, bx) = -2;  // queued
                            unknown.push_back({bz, by, bx});
                        }
                    }
                }
            }
        }
        std::sort(unknown.begin(), unknown.end());
        evaluate_corners(unknown);

        // Split into agreeing and active cells; placeholders count as
        // occupied, but any placeholder on an active cell is re-evaluated and
        // the classification repeated until stable.
        std::vector<Cell> active;
        std::vector<std::array<int, 3>> pending;
        while (true) {
            active.clear();
            pending.clear();
            for (const Cell& c : cells) {
                int first = -1;
                bool agree = true;
                for (int dz = 0; dz <= 1; ++dz) {
                    for (int dy = 0; dy <= 1; ++dy) {
                        for (int dx = 0; dx <= 1; ++dx) {
                            const std::int8_t v =
                                corner_at((c.z + dz) * s, (c.y + dy) * s, (c.x + dx) * s);
                            const int occ = v >= 1 ? 1 : 0;
                            if (first < 0) {
                                first = occ;
                            } else if (occ != first) {
                                agree = false;
                            }
                        }
                    }
                }
                if (!agree) active.push_back(c);
            }
            for (const Cell& c : active) {
                for (int dz = 0; dz <= 1; ++dz) {
                    for (int dy = 0; dy <= 1; ++dy) {
                        for (int dx = 0; dx <= 1; ++dx) {
                            const int bz = (c.z + dz) * s, by = (c.y + dy) * s, bx = (c.x + dx) * s;
                            if (corner_at(bz, by, bx) == 2) {
                                corner_at(bz, by, bx) = -2;
                                pending.push_back({bz, by, bx});
                            }
                        }
                    }
                }
            }
            if (pending.empty()) break;
            std::sort(pending.begin(), pending.end());
            evaluate_corners(pending);
        }

        // Fill agreeing cells wholesale.
        {
            std::size_t a = 0;
            for (const Cell& c : cells) {
                if (a < active.size() && active[a].z == c.z && active[a].y == c.y &&
                    active[a].x == c.x) {
                    ++a;
                    continue;
                }
                const std::int8_t v = corner_at(c.z * s, c.y * s, c.x * s);
                fill_block(c.z * s, c.y * s, c.x * s, s, v >= 1 ? 1 : 0);
            }
        }

        if (s == 1) {
            // Finest level: active single-voxel cells get real center values.
            std::vector<Vec3> centers;
            centers.reserve(active.size());
            for (const Cell& c : active) {
                centers.push_back({static_cast<double>(c.x), static_cast<double>(c.y),
                                   static_cast<double>(c.z)});
            }
            const std::vector<double> probs = oracle(centers);
            for (std::size_t i = 0; i < active.size(); ++i) {
                mask.data[(static_cast<std::size_t>(active[i].z) * T + active[i].y) * T +
                          active[i].x] = probs[i] > 0.5 ? 1 : 0;
            }
            report.stage_evals.push_back(oracle.eval_count() - level_before);
            break;
        }

        report.stage_evals.push_back(oracle.eval_count() - level_before);
        std::vector<Cell> next;
        next.reserve(active.size() * 8);
        for (const Cell& c : active) {
            for (int dz = 0; dz <= 1; ++dz) {
                for (int dy = 0; dy <= 1; ++dy) {
                    for (int dx = 0; dx <= 1; ++dx) {
                        next.push_back({c.z * 2 + dz, c.y * 2 + dy, c.x * 2 + dx});
                    }
                }
            }
        }
        cells = std::move(next);
        R *= 2;
    }

    report.eval_count = oracle.eval_count() - before;
    report.peak_batch = oracle.peak_batch();
    report.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(mask), std::move(report)};
}

}  // namespace

ExtractionResult mise_extract(OccupancyOracle& oracle, int resolution, int init_resolution) {
    return octree_extract(oracle, resolution, init_resolution, nullptr);
}

ExtractionResult seeded_extract(OccupancyOracle& oracle, int resolution, int init_resolution,
                                const std::vector<std::uint8_t>& seed,
                                const GridShape& seed_shape) {
    check_resolutions(resolution, init_resolution);
    const std::vector<std::uint8_t> cells = upsample_nearest(seed, seed_shape, init_resolution);
    return octree_extract(oracle, resolution, init_resolution, &cells);
}

ExtractionResult seeded_extract(OccupancyOracle& oracle, OssNet& model, const Volume& volume,
                                int resolution, int init_resolution) {
    AuxSegmentation aux = model.predict_aux(volume);
    if (!aux.present) throw CapabilityError("model has no auxiliary segmentation head");
    std::vector<std::uint8_t> coarse(aux.probs.size());
    for (std::size_t i = 0; i < coarse.size(); ++i) coarse[i] = aux.probs[i] > 0.5 ? 1 : 0;
    return seeded_extract(oracle, resolution, init_resolution, coarse, aux.shape);
}

}  // namespace oss
