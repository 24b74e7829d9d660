#include <doctest.h>

#include <algorithm>

#include "oss/bench.hpp"

using namespace oss;

namespace {

std::vector<VolumeSample> tiny_dataset(int count, int resolution, std::uint64_t seed0) {
    std::vector<VolumeSample> out;
    for (int i = 0; i < count; ++i) {
        PhantomConfig config;
        config.resolution = resolution;
        config.seed = seed0 + static_cast<std::uint64_t>(i);
        auto [volume, mask] = generate_phantom(config);
        out.push_back({std::move(volume), std::move(mask), "p" + std::to_string(i)});
    }
    return out;
}

}  // namespace

TEST_CASE("batch-cap sweep keeps the extracted masks identical") {
    const auto data = tiny_dataset(1, 32, 40);
    OssNet model(OssNetConfig::variant('C'), 8);
    const BatchSweepResult result =
        sweep_max_batch(model, data[0].volume, {64, 1024, 16384}, 32, 8);
    REQUIRE(result.rows.size() == 3);
    CHECK(result.outputs_identical);
    for (const BatchSweepRow& row : result.rows) {
        CHECK(row.octree_evals == result.rows[0].octree_evals);
        CHECK(row.seeded_evals == result.rows[0].seeded_evals);
        CHECK(row.octree_ms >= 0.0);
        CHECK(row.seeded_ms >= 0.0);
    }
    CHECK(!result.to_text().empty());
}

TEST_CASE("location sweep memory proxy grows linearly") {
    const auto data = tiny_dataset(1, 32, 41);
    OssNet model(OssNetConfig::variant('C'), 8);
    Rng rng(9);
    const LocationSweepResult result =
        sweep_locations(model, data[0].volume, {64, 128, 256}, rng);
    REQUIRE(result.rows.size() == 3);
    const std::size_t per_location =
        (3 + static_cast<std::size_t>(model.config().in_channels) * 343) * sizeof(double);
    for (std::size_t i = 0; i < result.rows.size(); ++i) {
        CHECK(result.rows[i].memory_proxy_bytes == result.rows[i].n_locations * per_location);
        CHECK(result.rows[i].wall_ms > 0.0);
        if (i > 0) {
            CHECK(result.rows[i].memory_proxy_bytes > result.rows[i - 1].memory_proxy_bytes);
        }
    }
    CHECK(!result.to_text().empty());
}

TEST_CASE("sampling comparison produces strategy-by-count rows") {
    const auto train_set = tiny_dataset(2, 32, 42);
    const auto val_set = tiny_dataset(1, 32, 50);
    TrainConfig base;
    base.epochs = 1;
    base.batch_volumes = 2;
    base.n_val = 256;
    base.decay_epochs = {};
    const SamplingResult result =
        compare_sampling(base, OssNetConfig::variant('C'), train_set, val_set, {64, 128}, {1, 2});
    REQUIRE(result.rows.size() == 4);  // 2 strategies x 2 counts
    for (const SamplingRow& row : result.rows) {
        REQUIRE(row.iou_runs.size() == 2);
        REQUIRE(row.dice_runs.size() == 2);
        CHECK(row.best_iou == *std::max_element(row.iou_runs.begin(), row.iou_runs.end()));
        CHECK(row.best_dice == *std::max_element(row.dice_runs.begin(), row.dice_runs.end()));
        CHECK(row.best_dice >= row.best_iou);
    }
    std::size_t uniform_rows = 0;
    for (const SamplingRow& row : result.rows) {
        uniform_rows += row.strategy == SamplingStrategy::Uniform;
    }
    CHECK(uniform_rows == 2);
    CHECK(!result.to_text().empty());
}

TEST_CASE("inference comparison reports per-volume ratios") {
    const auto data = tiny_dataset(2, 32, 60);
    OssNet model(OssNetConfig::variant('C'), 8);
    const InferenceResult result = compare_inference(model, data, 32, 8, 4096);
    REQUIRE(result.rows.size() == 2);
    for (const InferenceRow& row : result.rows) {
        CHECK(row.octree_evals > 0);
        CHECK(row.seeded_evals > 0);
        CHECK(row.disagreement >= 0.0);
        CHECK(row.disagreement <= 1.0);
        CHECK(row.seed_iou >= 0.0);
        CHECK(row.seed_iou <= 1.0);
    }
    CHECK(result.mean_eval_ratio > 0.0);
    CHECK(!result.to_text().empty());
}
