#include "oss/bench.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>

#include "oss/metrics.hpp"

namespace oss {

namespace {

const char* strategy_name(SamplingStrategy s) {
    return s == SamplingStrategy::Uniform ? "uniform" : "border";
}

}  // namespace

std::string BatchSweepResult::to_text() const {
    std::ostringstream out;
    out << "max_batch octree_evals seeded_evals octree_ms seeded_ms\n";
    for (const BatchSweepRow& r : rows) {
        out << r.max_batch << ' ' << r.octree_evals << ' ' << r.seeded_evals << ' '
            << std::fixed << std::setprecision(2) << r.octree_ms << ' ' << r.seeded_ms << '\n';
        out.unsetf(std::ios::floatfield);
    }
    out << "outputs_identical " << (outputs_identical ? "yes" : "no") << '\n';
    return out.str();
}

BatchSweepResult sweep_max_batch(OssNet& model, const Volume& volume,
                                 const std::vector<std::size_t>& batch_values, int resolution,
                                 int init_resolution) {
    if (batch_values.empty()) throw ArgumentError("empty batch value sweep");
    BatchSweepResult result;
    Mask octree_ref, seeded_ref;
    for (std::size_t max_batch : batch_values) {
        OccupancyOracle oracle(model_oracle(model, volume, resolution), max_batch);
        ExtractionResult octree = mise_extract(oracle, resolution, init_resolution);
        oracle.reset_counters();
        ExtractionResult seeded =
            seeded_extract(oracle, model, volume, resolution, init_resolution);

        BatchSweepRow row;
        row.max_batch = max_batch;
        row.octree_evals = octree.report.eval_count;
        row.seeded_evals = seeded.report.eval_count;
        row.octree_ms = octree.report.wall_ms;
        row.seeded_ms = seeded.report.wall_ms;
        result.rows.push_back(row);

        if (octree_ref.data.empty()) {
            octree_ref = std::move(octree.mask);
            seeded_ref = std::move(seeded.mask);
        } else if (octree.mask.data != octree_ref.data || seeded.mask.data != seeded_ref.data) {
            result.outputs_identical = false;
        }
    }
    return result;
}

std::string LocationSweepResult::to_text() const {
    std::ostringstream out;
    out << "n_locations wall_ms memory_proxy_bytes\n";
    for (const LocationSweepRow& r : rows) {
        out << r.n_locations << ' ' << std::fixed << std::setprecision(2) << r.wall_ms << ' '
            << r.memory_proxy_bytes << '\n';
        out.unsetf(std::ios::floatfield);
    }
    return out.str();
}

LocationSweepResult sweep_locations(OssNet& model, const Volume& volume,
                                    const std::vector<std::size_t>& counts, Rng& rng) {
    if (counts.empty()) throw ArgumentError("empty location sweep");
    LocationSweepResult result;
    const GridShape shape{volume.d, volume.h, volume.w};
    const std::size_t patch_doubles =
        model.config().use_patch_encoder
            ? static_cast<std::size_t>(model.config().in_channels) * 7 * 7 * 7
            : 0;
    for (std::size_t n : counts) {
        const std::vector<Vec3> locations = sample_uniform(shape, n, rng);
        SampleBatch batch;
        batch.locations = locations;
        batch.labels.assign(n, 0);
        if (model.config().use_patch_encoder) {
            batch.patches.reserve(n);
            for (const Vec3& p : locations) {
                batch.patches.push_back(
                    extract_patch(volume, p, model.config().patch_source_size));
            }
        }
        const auto t0 = std::chrono::steady_clock::now();
        (void)model.forward(volume, batch, ad::Mode::Eval);
        LocationSweepRow row;
        row.n_locations = n;
        row.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                .count();
        row.memory_proxy_bytes = n * (3 + patch_doubles) * sizeof(double);
        result.rows.push_back(row);
    }
    return result;
}

std::string SamplingResult::to_text() const {
    std::ostringstream out;
    out << std::left << std::setw(10) << "strategy" << std::setw(8) << "n" << std::setw(10)
        << "best_iou" << std::setw(10) << "best_dice" << "runs(dice)\n";
    for (const SamplingRow& r : rows) {
        out << std::left << std::setw(10) << strategy_name(r.strategy) << std::setw(8)
            << r.n_locations << std::setw(10) << std::fixed << std::setprecision(4) << r.best_iou
            << std::setw(10) << r.best_dice;
        out.unsetf(std::ios::floatfield);
        for (std::size_t i = 0; i < r.dice_runs.size(); ++i) {
            if (i) out << ',';
            out << std::fixed << std::setprecision(4) << r.dice_runs[i];
            out.unsetf(std::ios::floatfield);
        }
        out << '\n';
    }
    return out.str();
}

SamplingResult compare_sampling(const TrainConfig& base_config, const OssNetConfig& model_config,
                                const std::vector<VolumeSample>& train_set,
                                const std::vector<VolumeSample>& val_set,
                                const std::vector<std::size_t>& location_counts,
                                const std::vector<std::uint64_t>& seeds) {
    if (location_counts.empty() || seeds.empty()) {
        throw ArgumentError("sampling comparison needs location counts and seeds");
    }
    SamplingResult result;
    for (SamplingStrategy strategy : {SamplingStrategy::Uniform, SamplingStrategy::Border}) {
        for (std::size_t n : location_counts) {
            SamplingRow row;
            row.strategy = strategy;
            row.n_locations = n;
            for (std::uint64_t seed : seeds) {
                TrainConfig config = base_config;
                config.sampling = strategy;
                config.n_locations = n;
                config.seed = seed;
                OssNet model(model_config, seed);
                const TrainResult trained =
                    train(config, model, train_set, val_set, /*checkpoint_path=*/"",
                          /*metrics_path=*/"");
                double best_iou = 0.0;
                for (const EpochRecord& rec : trained.log) best_iou = std::max(best_iou, rec.iou);
                row.iou_runs.push_back(best_iou);
                row.dice_runs.push_back(trained.best_dice);
            }
            row.best_iou = *std::max_element(row.iou_runs.begin(), row.iou_runs.end());
            row.best_dice = *std::max_element(row.dice_runs.begin(), row.dice_runs.end());
            result.rows.push_back(std::move(row));
        }
    }
    return result;
}

std::string InferenceResult::to_text() const {
    std::ostringstream out;
    out << "volume octree_evals seeded_evals eval_ratio disagreement seed_iou octree_ms "
           "seeded_ms\n";
    for (const InferenceRow& r : rows) {
        out << r.name << ' ' << r.octree_evals << ' ' << r.seeded_evals << ' ' << std::fixed
            << std::setprecision(4)
            << static_cast<double>(r.seeded_evals) / static_cast<double>(r.octree_evals) << ' '
            << std::setprecision(6) << r.disagreement << ' ' << std::setprecision(4) << r.seed_iou
            << ' ' << std::setprecision(2) << r.octree_ms << ' ' << r.seeded_ms << '\n';
        out.unsetf(std::ios::floatfield);
    }
    out << std::fixed << std::setprecision(4) << "mean_eval_ratio " << mean_eval_ratio
        << "\nmean_speed_ratio " << mean_speed_ratio << '\n';
    return out.str();
}

InferenceResult compare_inference(OssNet& model, const std::vector<VolumeSample>& volumes,
                                  int resolution, int init_resolution, std::size_t max_batch) {
    if (volumes.empty()) throw ArgumentError("inference comparison needs volumes");
    InferenceResult result;
    double eval_ratio_sum = 0.0;
    double speed_ratio_sum = 0.0;
    for (const VolumeSample& sample : volumes) {
        OccupancyOracle oracle(model_oracle(model, sample.volume, resolution), max_batch);
        ExtractionResult octree = mise_extract(oracle, resolution, init_resolution);
        oracle.reset_counters();
        ExtractionResult seeded =
            seeded_extract(oracle, model, sample.volume, resolution, init_resolution);

        InferenceRow row;
        row.name = sample.name;
        row.octree_evals = octree.report.eval_count;
        row.seeded_evals = seeded.report.eval_count;
        row.octree_ms = octree.report.wall_ms;
        row.seeded_ms = seeded.report.wall_ms;
        row.disagreement = disagreement(seeded.mask, octree.mask);

        AuxSegmentation aux = model.predict_aux(sample.volume);
        if (aux.present) {
            std::vector<std::uint8_t> coarse(aux.probs.size());
            for (std::size_t i = 0; i < coarse.size(); ++i) {
                coarse[i] = aux.probs[i] > 0.5 ? 1 : 0;
            }
            row.seed_iou = iou(upsample_nearest(coarse, aux.shape, sample.mask.w),
                               sample.mask.data);
        }

        eval_ratio_sum +=
            static_cast<double>(row.seeded_evals) / static_cast<double>(row.octree_evals);
        speed_ratio_sum = speed_ratio_sum + (row.seeded_ms > 0.0 ? row.octree_ms / row.seeded_ms
                                                                 : 1.0);
        result.rows.push_back(std::move(row));
    }
    result.mean_eval_ratio = eval_ratio_sum / static_cast<double>(volumes.size());
    result.mean_speed_ratio = speed_ratio_sum / static_cast<double>(volumes.size());
    return result;
}

}  // namespace oss
