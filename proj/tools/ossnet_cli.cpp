// Command-line front end: phantom generation, training, inference,
// evaluation, and benchmark sweeps over OSV volumes and OSSCKPT checkpoints.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "oss/bench.hpp"
#include "oss/checkpoint.hpp"
#include "oss/extract.hpp"
#include "oss/metrics.hpp"
#include "oss/train.hpp"

namespace fs = std::filesystem;
using namespace oss;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

// --- Flat key=value configuration -------------------------------------------

using KvMap = std::map<std::string, std::string>;

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

KvMap load_kv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path);
    KvMap kv;
    std::string line;
    while (std::getline(in, line)) {
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw FormatError("config line is not key=value: " + t);
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return kv;
}

void apply_overrides(KvMap& kv, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ArgumentError("override is not key=value: " + o);
        kv[trim(o.substr(0, eq))] = trim(o.substr(eq + 1));
    }
}

std::vector<int> parse_int_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!trim(item).empty()) out.push_back(std::stoi(trim(item)));
    }
    return out;
}

struct TrainSetup {
    TrainConfig train;
    char variant = 'C';
    int in_channels = 2;
};

TrainSetup parse_train_config(const KvMap& kv) {
    TrainSetup setup;
    for (const auto& [key, value] : kv) {
        if (key == "epochs") setup.train.epochs = std::stoi(value);
        else if (key == "batch_volumes") setup.train.batch_volumes = std::stoi(value);
        else if (key == "n_locations") setup.train.n_locations = std::stoull(value);
        else if (key == "sampling") {
            if (value == "uniform") setup.train.sampling = SamplingStrategy::Uniform;
            else if (value == "border") setup.train.sampling = SamplingStrategy::Border;
            else throw ArgumentError("sampling must be uniform or border, got: " + value);
        } else if (key == "alpha") setup.train.alpha = std::stod(value);
        else if (key == "base_lr") setup.train.base_lr = std::stod(value);
        else if (key == "pau_lr") setup.train.pau_lr = std::stod(value);
        else if (key == "decay_epochs") setup.train.decay_epochs = parse_int_list(value);
        else if (key == "lookahead_k") setup.train.lookahead_k = std::stoi(value);
        else if (key == "lookahead_alpha") setup.train.lookahead_alpha = std::stod(value);
        else if (key == "n_val") setup.train.n_val = std::stoull(value);
        else if (key == "border_width") setup.train.border_width = std::stoi(value);
        else if (key == "seed") setup.train.seed = std::stoull(value);
        else if (key == "variant") {
            if (value.size() != 1) throw ArgumentError("variant must be one of O A B C D");
            setup.variant = value[0];
        } else if (key == "in_channels") setup.in_channels = std::stoi(value);
        else throw ArgumentError("unknown config key: " + key);
    }
    return setup;
}

std::string effective_config_text(const TrainSetup& s) {
    std::ostringstream out;
    out << "variant=" << s.variant << "\nin_channels=" << s.in_channels
        << "\nepochs=" << s.train.epochs << "\nbatch_volumes=" << s.train.batch_volumes
        << "\nn_locations=" << s.train.n_locations << "\nsampling="
        << (s.train.sampling == SamplingStrategy::Uniform ? "uniform" : "border")
        << "\nalpha=" << s.train.alpha << "\nbase_lr=" << s.train.base_lr
        << "\npau_lr=" << s.train.pau_lr << "\ndecay_epochs=";
    for (std::size_t i = 0; i < s.train.decay_epochs.size(); ++i) {
        if (i) out << ',';
        out << s.train.decay_epochs[i];
    }
    out << "\nlookahead_k=" << s.train.lookahead_k
        << "\nlookahead_alpha=" << s.train.lookahead_alpha << "\nn_val=" << s.train.n_val
        << "\nborder_width=" << s.train.border_width << "\nseed=" << s.train.seed << "\n";
    return out.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
}

std::string repro_command(int argc, char** argv) {
    std::ostringstream out;
    for (int i = 0; i < argc; ++i) {
        if (i) out << ' ';
        out << argv[i];
    }
    out << '\n';
    return out.str();
}

// Volume/mask pairs v{i}.osv / m{i}.osv in a directory, sorted by name.
std::vector<VolumeSample> load_dataset(const std::string& dir) {
    std::vector<std::string> volume_files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (name.size() > 5 && name[0] == 'v' && name.ends_with(".osv")) {
            volume_files.push_back(name);
        }
    }
    std::sort(volume_files.begin(), volume_files.end());
    std::vector<VolumeSample> dataset;
    for (const std::string& vname : volume_files) {
        const std::string mname = "m" + vname.substr(1);
        const fs::path mpath = fs::path(dir) / mname;
        if (!fs::exists(mpath)) throw IoError("missing mask for " + vname + ": " + mpath.string());
        VolumeSample sample;
        sample.volume = load_volume((fs::path(dir) / vname).string());
        sample.mask = load_mask(mpath.string());
        sample.name = vname;
        dataset.push_back(std::move(sample));
    }
    if (dataset.empty()) throw IoError("no v*.osv volumes found in " + dir);
    return dataset;
}

Mask mask_from_probs(const std::vector<double>& probs, int resolution) {
    Mask mask(resolution, resolution, resolution);
    for (std::size_t i = 0; i < probs.size(); ++i) mask.data[i] = probs[i] > 0.5 ? 1 : 0;
    return mask;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Occupancy-field volumetric segmentation toolkit"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "Cap on internal parallelism (compute is sequential)")
        ->check(CLI::PositiveNumber);

    // phantom
    auto* cmd_phantom = app.add_subcommand("phantom", "Generate synthetic volume/mask pairs");
    int ph_count = 20;
    PhantomConfig ph_config;
    std::string ph_out;
    cmd_phantom->add_option("--count", ph_count, "Number of pairs")->check(CLI::PositiveNumber);
    cmd_phantom->add_option("--resolution", ph_config.resolution, "Cubic resolution");
    cmd_phantom->add_option("--channels", ph_config.channels, "Input channels (1-4)");
    cmd_phantom->add_option("--noise", ph_config.noise_sigma, "Gaussian noise sigma");
    cmd_phantom->add_option("--seed", ph_config.seed, "Base seed");
    cmd_phantom->add_option("--out", ph_out, "Output directory")->required();

    // train
    auto* cmd_train = app.add_subcommand("train", "Train a model on a dataset directory");
    std::string tr_config_path, tr_data, tr_out;
    std::vector<std::string> tr_overrides;
    int tr_val_count = 0;
    cmd_train->add_option("--config", tr_config_path, "key=value config file");
    cmd_train->add_option("--data", tr_data, "Dataset directory (v*.osv + m*.osv)")->required();
    cmd_train->add_option("--out", tr_out, "Run directory")->required();
    cmd_train->add_option("--set", tr_overrides, "Config overrides key=value (win over file)");
    cmd_train->add_option("--val-count", tr_val_count, "Pairs held out for validation");

    // infer
    auto* cmd_infer = app.add_subcommand("infer", "Extract a dense mask from a checkpoint");
    std::string in_ckpt, in_volume, in_mode = "mise", in_out, in_report;
    int in_target_res = 0, in_init_res = 0;
    std::size_t in_max_batch = 4096;
    cmd_infer->add_option("--ckpt", in_ckpt, "Checkpoint path")->required();
    cmd_infer->add_option("--volume", in_volume, "Input OSV volume")->required();
    cmd_infer->add_option("--mode", in_mode, "dense|mise|seeded")
        ->check(CLI::IsMember({"dense", "mise", "seeded"}));
    cmd_infer->add_option("--target-res", in_target_res, "Output resolution")->required();
    cmd_infer->add_option("--init-res", in_init_res,
                          "Initial octree resolution (default target/4)");
    cmd_infer->add_option("--max-batch", in_max_batch, "Max locations per decoder pass");
    cmd_infer->add_option("--out", in_out, "Output mask OSV")->required();
    cmd_infer->add_option("--report", in_report, "Optional JSON report path");

    // eval
    auto* cmd_eval = app.add_subcommand("eval", "Compare a predicted mask against a label");
    std::string ev_pred, ev_label;
    cmd_eval->add_option("--pred", ev_pred, "Predicted mask OSV")->required();
    cmd_eval->add_option("--label", ev_label, "Ground-truth mask OSV")->required();

    // bench
    auto* cmd_bench = app.add_subcommand("bench", "Benchmark sweeps");
    std::string be_kind, be_ckpt, be_volume, be_data, be_out;
    int be_res = 64, be_init_res = 16, be_epochs = 3;
    std::size_t be_max_batch = 4096;
    std::vector<std::uint64_t> be_seeds = {1, 2, 3};
    cmd_bench->add_option("--kind", be_kind, "batch|locations|sampling|inference")
        ->check(CLI::IsMember({"batch", "locations", "sampling", "inference"}))
        ->required();
    cmd_bench->add_option("--ckpt", be_ckpt, "Checkpoint (batch/locations/inference)");
    cmd_bench->add_option("--volume", be_volume, "Volume OSV (batch/locations)");
    cmd_bench->add_option("--data", be_data, "Dataset directory (sampling/inference)");
    cmd_bench->add_option("--resolution", be_res, "Extraction resolution");
    cmd_bench->add_option("--init-res", be_init_res, "Initial octree resolution");
    cmd_bench->add_option("--max-batch", be_max_batch, "Max locations per decoder pass");
    cmd_bench->add_option("--epochs", be_epochs, "Training epochs per sampling run");
    cmd_bench->add_option("--seeds", be_seeds, "Seeds for sampling comparison");
    cmd_bench->add_option("--out", be_out, "Optional output file for the table");

    CLI11_PARSE(app, argc, argv);
    (void)threads;  // compute is sequential; accepted for interface stability

    try {
        if (*cmd_phantom) {
            fs::create_directories(ph_out);
            for (int i = 0; i < ph_count; ++i) {
                PhantomConfig config = ph_config;
                config.seed = ph_config.seed + static_cast<std::uint64_t>(i);
                auto [volume, mask] = generate_phantom(config);
                std::ostringstream stem;
                stem << i;
                save_volume(volume, (fs::path(ph_out) / ("v" + stem.str() + ".osv")).string());
                save_mask(mask, (fs::path(ph_out) / ("m" + stem.str() + ".osv")).string());
            }
            std::cout << "wrote " << ph_count << " volume/mask pairs to " << ph_out << "\n";
        } else if (*cmd_train) {
            KvMap kv = tr_config_path.empty() ? KvMap{} : load_kv_file(tr_config_path);
            apply_overrides(kv, tr_overrides);
            TrainSetup setup = parse_train_config(kv);
            std::vector<VolumeSample> dataset = load_dataset(tr_data);
            if (tr_val_count < 0 ||
                static_cast<std::size_t>(tr_val_count) >= dataset.size()) {
                throw ArgumentError("val-count must leave at least one training pair");
            }
            std::vector<VolumeSample> val_set(
                dataset.end() - tr_val_count, dataset.end());
            dataset.resize(dataset.size() - static_cast<std::size_t>(tr_val_count));

            fs::create_directories(tr_out);
            write_text(fs::path(tr_out) / "effective.cfg", effective_config_text(setup));
            write_text(fs::path(tr_out) / "repro.txt", repro_command(argc, argv));

            OssNet model(OssNetConfig::variant(setup.variant, setup.in_channels),
                         setup.train.seed);
            const TrainResult result =
                train(setup.train, model, dataset, val_set,
                      (fs::path(tr_out) / "best.ossckpt").string(),
                      (fs::path(tr_out) / "metrics.log").string());
            std::cout << "best dice " << result.best_dice << " at epoch " << result.best_epoch
                      << "\n";
        } else if (*cmd_infer) {
            OssNet model(load_checkpoint(in_ckpt));
            const Volume volume = load_volume(in_volume);
            if (in_target_res <= 0) throw ArgumentError("target-res must be positive");
            if (in_init_res <= 0) in_init_res = std::max(1, in_target_res / 4);
            OccupancyOracle oracle(model_oracle(model, volume, in_target_res), in_max_batch);
            ExtractionResult result =
                in_mode == "dense" ? dense_extract(oracle, in_target_res)
                : in_mode == "mise"
                    ? mise_extract(oracle, in_target_res, in_init_res)
                    : seeded_extract(oracle, model, volume, in_target_res, in_init_res);
            save_mask(result.mask, in_out);
            std::cout << result.report.to_text() << "\n";
            if (!in_report.empty()) write_text(in_report, result.report.to_json() + "\n");
        } else if (*cmd_eval) {
            const Mask pred = load_mask(ev_pred);
            const Mask label = load_mask(ev_label);
            const MetricReport report = metric_report(pred, label);
            std::cout << "iou " << report.iou << "\ndice " << report.dice << "\ndisagreement "
                      << report.disagreement_fraction << "\ncount_pred " << report.count_a
                      << "\ncount_label " << report.count_b << "\ncount_inter "
                      << report.count_inter << "\ncount_union " << report.count_union << "\n";
        } else if (*cmd_bench) {
            std::string table;
            if (be_kind == "batch") {
                if (be_ckpt.empty() || be_volume.empty()) {
                    throw ArgumentError("batch sweep needs --ckpt and --volume");
                }
                OssNet model(load_checkpoint(be_ckpt));
                const Volume volume = load_volume(be_volume);
                std::vector<std::size_t> values;
                for (int p = 6; p <= 14; p += 2) values.push_back(std::size_t{1} << p);
                table = sweep_max_batch(model, volume, values, be_res, be_init_res).to_text();
            } else if (be_kind == "locations") {
                if (be_ckpt.empty() || be_volume.empty()) {
                    throw ArgumentError("locations sweep needs --ckpt and --volume");
                }
                OssNet model(load_checkpoint(be_ckpt));
                const Volume volume = load_volume(be_volume);
                Rng rng(0x6c6f63);
                std::vector<std::size_t> counts;
                for (int p = 10; p <= 14; ++p) counts.push_back(std::size_t{1} << p);
                table = sweep_locations(model, volume, counts, rng).to_text();
            } else if (be_kind == "sampling") {
                if (be_data.empty()) throw ArgumentError("sampling comparison needs --data");
                std::vector<VolumeSample> dataset = load_dataset(be_data);
                const std::size_t val_n = std::max<std::size_t>(1, dataset.size() / 5);
                std::vector<VolumeSample> val_set(dataset.end() - static_cast<std::ptrdiff_t>(val_n),
                                                  dataset.end());
                dataset.resize(dataset.size() - val_n);
                TrainConfig config;
                config.epochs = be_epochs;
                config.decay_epochs = {};
                config.n_val = 1 << 11;
                table = compare_sampling(config, OssNetConfig::variant('C'), dataset, val_set,
                                         {1 << 10, 1 << 11, 1 << 12}, be_seeds)
                            .to_text();
            } else {
                if (be_ckpt.empty() || be_data.empty()) {
                    throw ArgumentError("inference comparison needs --ckpt and --data");
                }
                OssNet model(load_checkpoint(be_ckpt));
                table = compare_inference(model, load_dataset(be_data), be_res, be_init_res,
                                          be_max_batch)
                            .to_text();
            }
            std::cout << table;
            if (!be_out.empty()) write_text(be_out, table);
        }
    } catch (const ArgumentError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const Error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return 0;
}
