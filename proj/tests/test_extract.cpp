#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "oss/extract.hpp"
#include "oss/metrics.hpp"

using namespace oss;

namespace {

OracleFn constant_oracle(double value) {
    return [value](const std::vector<Vec3>& points) {
        return std::vector<double>(points.size(), value);
    };
}

Mask dense_reference(const OracleFn& fn, int res) {
    OccupancyOracle oracle(fn);
    return dense_extract(oracle, res).mask;
}

}  // namespace

TEST_CASE("dense extraction evaluates every voxel center exactly once") {
    OccupancyOracle oracle(constant_oracle(0.9));
    const ExtractionResult result = dense_extract(oracle, 16);
    CHECK(result.mask.count() == 16 * 16 * 16);
    CHECK(result.report.eval_count == 16 * 16 * 16);
    CHECK(result.report.method == "dense");

    OccupancyOracle low(constant_oracle(0.1));
    CHECK(dense_extract(low, 8).mask.count() == 0);
}

TEST_CASE("dense sphere volume approximates the analytic value") {
    OccupancyOracle oracle(sphere_oracle({15.5, 15.5, 15.5}, 8.0, 4.0));
    const ExtractionResult result = dense_extract(oracle, 32);
    const double analytic = 4.0 / 3.0 * 3.14159265358979 * 8.0 * 8.0 * 8.0;  // ~2145
    CHECK(std::abs(static_cast<double>(result.mask.count()) - analytic) < 0.05 * analytic);
}

TEST_CASE("sphere oracle geometry") {
    const OracleFn fn = sphere_oracle({0, 0, 0}, 5.0, 4.0);
    const auto vals = fn({{0, 0, 0}, {5.0, 0, 0}, {20.0, 0, 0}});
    CHECK(vals[0] > 0.99);
    CHECK(vals[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(vals[2] < 0.01);
}

TEST_CASE("octree extraction on a constant field stops at the coarse level") {
    OccupancyOracle oracle(constant_oracle(0.9));
    const ExtractionResult result = mise_extract(oracle, 32, 8);
    CHECK(result.mask.count() == 32 * 32 * 32);
    // Only the (init+1)^3 coarse corner lattice is ever evaluated.
    CHECK(result.report.eval_count == 9 * 9 * 9);
    REQUIRE(result.report.stage_evals.size() >= 2);
    CHECK(result.report.stage_evals[0] == 9 * 9 * 9);
    CHECK(result.report.stage_evals[1] == 0);
    CHECK(result.report.method == "octree");
}

TEST_CASE("octree matches dense on hard spheres at several radii") {
    for (double radius : {4.0, 8.0, 12.0}) {
        const OracleFn fn = sphere_oracle({31.5, 31.5, 31.5}, radius, 8.0);
        const Mask dense = dense_reference(fn, 64);
        OccupancyOracle oracle(fn);
        const ExtractionResult octree = mise_extract(oracle, 64, 16);
        CHECK(disagreement(octree.mask, dense) < 0.001);
        CHECK(octree.report.eval_count < 64 * 64 * 64);

        // No disagreement in the boundary band: voxels adjacent to a value
        // flip in the dense reference must agree exactly.
        std::size_t boundary_diffs = 0;
        for (int z = 0; z < 64; ++z) {
            for (int y = 0; y < 64; ++y) {
                for (int x = 0; x < 64; ++x) {
                    bool boundary = false;
                    for (int dz = -1; dz <= 1 && !boundary; ++dz)
                        for (int dy = -1; dy <= 1 && !boundary; ++dy)
                            for (int dx = -1; dx <= 1 && !boundary; ++dx) {
                                const int nz = z + dz, ny = y + dy, nx = x + dx;
                                if (nz < 0 || ny < 0 || nx < 0 || nz >= 64 || ny >= 64 ||
                                    nx >= 64) {
                                    continue;
                                }
                                if (dense.at(nz, ny, nx) != dense.at(z, y, x)) boundary = true;
                            }
                    if (boundary && octree.mask.at(z, y, x) != dense.at(z, y, x)) {
                        boundary_diffs += 1;
                    }
                }
            }
        }
        CHECK(boundary_diffs == 0);
    }
}

TEST_CASE("extraction output is invariant to the oracle batch limit") {
    const OracleFn fn = sphere_oracle({15.5, 15.5, 15.5}, 9.0, 6.0);
    std::vector<std::vector<std::uint8_t>> dense_masks, octree_masks, seeded_masks;
    // Seed grid: coarse occupancy of the same sphere on an 8^3 cell grid.
    std::vector<std::uint8_t> seed(8 * 8 * 8, 0);
    {
        std::vector<Vec3> centers;
        for (int z = 0; z < 8; ++z)
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    centers.push_back({x * 4.0 + 1.5, y * 4.0 + 1.5, z * 4.0 + 1.5});
        const auto vals = fn(centers);
        for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = vals[i] > 0.5 ? 1 : 0;
    }
    for (std::size_t max_batch : {std::size_t(64), std::size_t(1024), std::size_t(16384)}) {
        OccupancyOracle d(fn, max_batch);
        dense_masks.push_back(dense_extract(d, 32).mask.data);
        CHECK(d.peak_batch() <= max_batch);
        OccupancyOracle o(fn, max_batch);
        octree_masks.push_back(mise_extract(o, 32, 8).mask.data);
        CHECK(o.peak_batch() <= max_batch);
        OccupancyOracle s(fn, max_batch);
        seeded_masks.push_back(seeded_extract(s, 32, 8, seed, {8, 8, 8}).mask.data);
        CHECK(s.peak_batch() <= max_batch);
    }
    for (std::size_t i = 1; i < dense_masks.size(); ++i) {
        CHECK(dense_masks[i] == dense_masks[0]);
        CHECK(octree_masks[i] == octree_masks[0]);
        CHECK(seeded_masks[i] == seeded_masks[0]);
    }
}

TEST_CASE("nearest-neighbour upsampling") {
    // Factor 1 is the identity.
    std::vector<std::uint8_t> grid = {1, 0, 0, 1, 1, 1, 0, 0};
    CHECK(upsample_nearest(grid, {2, 2, 2}, 2) == grid);

    // A single coarse cell covers factor^3 fine cells.
    std::vector<std::uint8_t> one(8, 0);
    one[0] = 1;
    const auto up = upsample_nearest(one, {2, 2, 2}, 4);
    CHECK(up.size() == 64);
    CHECK(std::accumulate(up.begin(), up.end(), std::size_t(0)) == 8);
    for (int z = 0; z < 2; ++z)
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) CHECK(up[(z * 4 + y) * 4 + x] == 1);
}

TEST_CASE("seeded extraction with an empty seed reduces to the plain octree") {
    const OracleFn fn = sphere_oracle({15.5, 15.5, 15.5}, 8.0, 6.0);
    OccupancyOracle plain(fn);
    const ExtractionResult octree = mise_extract(plain, 32, 8);
    OccupancyOracle seeded(fn);
    const std::vector<std::uint8_t> empty_seed(8 * 8 * 8, 0);
    const ExtractionResult result = seeded_extract(seeded, 32, 8, empty_seed, {8, 8, 8});
    CHECK(result.mask.data == octree.mask.data);
    CHECK(result.report.eval_count == octree.report.eval_count);
    CHECK(result.report.seeded_corners == 0);
    CHECK(result.report.method == "seeded");
}

TEST_CASE("a faithful seed saves evaluations without changing the mask") {
    const OracleFn fn = sphere_oracle({31.5, 31.5, 31.5}, 14.0, 6.0);
    OccupancyOracle plain(fn);
    const ExtractionResult octree = mise_extract(plain, 64, 16);

    // Seed: coarse cell occupancy of the same field on a 16^3 grid.
    std::vector<std::uint8_t> seed(16 * 16 * 16, 0);
    std::vector<Vec3> centers;
    for (int z = 0; z < 16; ++z)
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x)
                centers.push_back({x * 4.0 + 1.5, y * 4.0 + 1.5, z * 4.0 + 1.5});
    const auto vals = fn(centers);
    for (std::size_t i = 0; i < seed.size(); ++i) seed[i] = vals[i] > 0.5 ? 1 : 0;

    OccupancyOracle counted(fn);
    const ExtractionResult result = seeded_extract(counted, 64, 16, seed, {16, 16, 16});
    CHECK(result.mask.data == octree.mask.data);
    CHECK(result.report.eval_count < octree.report.eval_count);
    CHECK(result.report.seeded_corners > 0);
}

TEST_CASE("an over-dilated seed is corrected by the cascade") {
    // Seed claims everything is occupied; the sphere only fills part of the
    // grid. The result must still match the dense reference bit for bit.
    const OracleFn fn = sphere_oracle({15.5, 15.5, 15.5}, 8.0, 6.0);
    const Mask dense = dense_reference(fn, 32);
    OccupancyOracle oracle(fn);
    const std::vector<std::uint8_t> full_seed(8 * 8 * 8, 1);
    const ExtractionResult result = seeded_extract(oracle, 32, 8, full_seed, {8, 8, 8});
    CHECK(disagreement(result.mask, dense) < 0.001);
}

TEST_CASE("resolution validation") {
    OccupancyOracle oracle(constant_oracle(0.5));
    CHECK_THROWS_AS(mise_extract(oracle, 32, 12), ArgumentError);  // not a power-of-two ratio
    CHECK_THROWS_AS(mise_extract(oracle, 32, 64), ArgumentError);  // init above target
    CHECK_THROWS_AS(mise_extract(oracle, 0, 0), ArgumentError);
    CHECK_THROWS_AS(dense_extract(oracle, -1), ArgumentError);
    const std::vector<std::uint8_t> seed(8, 0);
    CHECK_THROWS_AS(seeded_extract(oracle, 32, 8, seed, {4, 4, 4}), ShapeError);
}

TEST_CASE("oracle wrapper counts and validates") {
    std::size_t calls = 0;
    OracleFn fn = [&calls](const std::vector<Vec3>& pts) {
        calls += 1;
        return std::vector<double>(pts.size(), 0.25);
    };
    OccupancyOracle oracle(fn, 10);
    std::vector<Vec3> points(25);
    const auto vals = oracle(points);
    CHECK(vals.size() == 25);
    CHECK(calls == 3);  // 10 + 10 + 5
    CHECK(oracle.eval_count() == 25);
    CHECK(oracle.peak_batch() == 10);
    oracle.reset_counters();
    CHECK(oracle.eval_count() == 0);

    OracleFn bad = [](const std::vector<Vec3>& pts) {
        return std::vector<double>(pts.size() + 1, 0.5);
    };
    OccupancyOracle bad_oracle(bad);
    CHECK_THROWS_AS(bad_oracle({{0, 0, 0}}), SizeError);
}

TEST_CASE("extraction reports carry method, counts, and timings") {
    OccupancyOracle oracle(sphere_oracle({7.5, 7.5, 7.5}, 4.0, 6.0));
    const ExtractionResult result = mise_extract(oracle, 16, 4);
    CHECK(result.report.wall_ms >= 0.0);
    CHECK(std::accumulate(result.report.stage_evals.begin(), result.report.stage_evals.end(),
                          std::size_t(0)) == result.report.eval_count);
    const std::string text = result.report.to_text();
    CHECK(text.find("octree") != std::string::npos);
    const std::string json = result.report.to_json();
    CHECK(json.find("\"eval_count\"") != std::string::npos);
}

TEST_CASE("model-backed oracle agrees with direct forward evaluation") {
    PhantomConfig pconfig;
    pconfig.resolution = 32;
    pconfig.seed = 3;
    auto [volume, mask] = generate_phantom(pconfig);
    OssNet model(OssNetConfig::variant('C'), 9);
    const OracleFn fn = model_oracle(model, volume, 32);

    Rng rng(4);
    const auto locations = sample_uniform({32, 32, 32}, 32, rng);
    const auto via_oracle = fn(locations);

    SampleBatch batch;
    batch.locations = locations;
    for (const Vec3& p : locations) batch.patches.push_back(extract_patch(volume, p, 7));
    batch.labels.assign(locations.size(), 0);
    const ForwardResult direct = model.forward(volume, batch, ad::Mode::Eval);
    REQUIRE(via_oracle.size() == direct.probs.size());
    for (std::size_t i = 0; i < via_oracle.size(); ++i) {
        CHECK(via_oracle[i] == doctest::Approx(direct.probs[i]).epsilon(1e-9));
    }
}
