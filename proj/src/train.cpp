#include "oss/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "oss/checkpoint.hpp"
#include "oss/metrics.hpp"

namespace oss {

void TrainConfig::validate() const {
    if (epochs <= 0) throw ArgumentError("epochs must be positive");
    if (batch_volumes <= 0) throw ArgumentError("batch_volumes must be positive");
    if (n_locations == 0) throw ArgumentError("n_locations must be positive");
    if (!(alpha >= 0.0)) throw ArgumentError("alpha must be non-negative");
    if (!(base_lr > 0.0) || !(pau_lr > 0.0)) throw ArgumentError("learning rates must be positive");
    if (lookahead_k <= 0) throw ArgumentError("lookahead_k must be positive");
    if (!(lookahead_alpha > 0.0 && lookahead_alpha <= 1.0)) {
        throw ArgumentError("lookahead_alpha must be in (0, 1]");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw ArgumentError("betas must be in [0, 1)");
    }
    if (!std::is_sorted(decay_epochs.begin(), decay_epochs.end())) {
        throw ArgumentError("decay_epochs must be sorted");
    }
}

// --- Losses -----------------------------------------------------------------

double bce(const std::vector<double>& probs, const std::vector<double>& labels) {
    if (probs.size() != labels.size()) throw ShapeError("bce length mismatch");
    if (probs.empty()) throw ArgumentError("bce over empty batch");
    constexpr double kEps = 1e-7;
    double sum = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double p = std::min(1.0 - kEps, std::max(kEps, probs[i]));
        sum += -(labels[i] * std::log(p) + (1.0 - labels[i]) * std::log(1.0 - p));
    }
    return sum / static_cast<double>(probs.size());
}

double total_loss(const std::vector<double>& probs, const std::vector<double>& labels,
                  const std::vector<double>& aux_probs, const std::vector<double>& aux_labels,
                  double alpha) {
    double loss = bce(probs, labels);
    if (!aux_probs.empty()) loss += alpha * bce(aux_probs, aux_labels);
    return loss;
}

std::vector<double> aux_labels_maxpool(const Mask& mask, const GridShape& aux_shape) {
    if (aux_shape.d <= 0 || aux_shape.h <= 0 || aux_shape.w <= 0) {
        throw ShapeError("aux grid must be non-empty");
    }
    std::vector<double> out(static_cast<std::size_t>(aux_shape.d) * aux_shape.h * aux_shape.w, 0.0);
    for (int z = 0; z < mask.d; ++z) {
        const int az = static_cast<int>(static_cast<std::int64_t>(z) * aux_shape.d / mask.d);
        for (int y = 0; y < mask.h; ++y) {
            const int ay = static_cast<int>(static_cast<std::int64_t>(y) * aux_shape.h / mask.h);
            for (int x = 0; x < mask.w; ++x) {
                if (!mask.data[mask.index(z, y, x)]) continue;
                const int ax =
                    static_cast<int>(static_cast<std::int64_t>(x) * aux_shape.w / mask.w);
                out[(static_cast<std::size_t>(az) * aux_shape.h + ay) * aux_shape.w + ax] = 1.0;
            }
        }
    }
    return out;
}

// --- Optimizer --------------------------------------------------------------

void radam_step(std::vector<double>& param, const std::vector<double>& grad, RAdamState& state,
                double lr, double beta1, double beta2, double eps) {
    if (param.size() != grad.size()) throw ShapeError("radam size mismatch");
    if (state.m.empty()) {
        state.m.assign(param.size(), 0.0);
        state.v.assign(param.size(), 0.0);
    }
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double b1t = std::pow(beta1, t);
    const double b2t = std::pow(beta2, t);
    const double rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);

    double rect = 0.0;
    const bool rectified = rho_t > 4.0;
    if (rectified) {
        rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                         ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
    }
    for (std::size_t i = 0; i < param.size(); ++i) {
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grad[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grad[i] * grad[i];
        const double m_hat = state.m[i] / (1.0 - b1t);
        if (rectified) {
            const double v_hat = std::sqrt(state.v[i] / (1.0 - b2t));
            param[i] -= lr * rect * m_hat / (v_hat + eps);
        } else {
            param[i] -= lr * m_hat;
        }
    }
}

void lookahead_step(std::vector<double>& fast, LookaheadState& state, int k, double alpha) {
    if (state.slow.empty()) state.slow = fast;
    state.t += 1;
    if (state.t % k != 0) return;
    for (std::size_t i = 0; i < fast.size(); ++i) {
        state.slow[i] += alpha * (fast[i] - state.slow[i]);
        fast[i] = state.slow[i];
    }
}

double lr_schedule(int epoch, double base_lr, const std::vector<int>& decay_epochs) {
    double lr = base_lr;
    for (int e : decay_epochs) {
        if (epoch >= e) lr /= 10.0;
    }
    return lr;
}

Optimizer::Optimizer(std::vector<ad::Param*> params, const TrainConfig& config) : config_(config) {
    config_.validate();
    states_.reserve(params.size());
    for (ad::Param* p : params) {
        State s;
        s.param = p;
        s.m.assign(p->value.size(), 0.0);
        s.v.assign(p->value.size(), 0.0);
        s.slow = p->value.data;
        states_.push_back(std::move(s));
    }
}

void Optimizer::step(int epoch) {
    step_count_ += 1;
    const double t = static_cast<double>(step_count_);
    const double b1t = std::pow(config_.beta1, t);
    const double b2t = std::pow(config_.beta2, t);
    const double rho_inf = 2.0 / (1.0 - config_.beta2) - 1.0;
    const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
    const bool rectified = rho_t > 4.0;
    const double rect = rectified ? std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf /
                                              ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
                                  : 0.0;
    const bool sync = step_count_ % config_.lookahead_k == 0;

    for (State& s : states_) {
        const double lr =
            lr_schedule(epoch, s.param->pau_group ? config_.pau_lr : config_.base_lr,
                        config_.decay_epochs);
        std::vector<double>& w = s.param->value.data;
        const std::vector<double>& g = s.param->grad.data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            s.m[i] = config_.beta1 * s.m[i] + (1.0 - config_.beta1) * g[i];
            s.v[i] = config_.beta2 * s.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double m_hat = s.m[i] / (1.0 - b1t);
            if (rectified) {
                const double v_hat = std::sqrt(s.v[i] / (1.0 - b2t));
                w[i] -= lr * rect * m_hat / (v_hat + config_.adam_eps);
            } else {
                w[i] -= lr * m_hat;
            }
        }
        if (sync) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                s.slow[i] += config_.lookahead_alpha * (w[i] - s.slow[i]);
                w[i] = s.slow[i];
            }
        }
    }
}

// --- Validation & training --------------------------------------------------

ValidationResult validate(OssNet& model, const std::vector<VolumeSample>& dataset,
                          std::size_t n_val, Rng& rng) {
    if (dataset.empty()) throw ArgumentError("validation dataset is empty");
    double iou_sum = 0.0;
    double dice_sum = 0.0;
    for (const VolumeSample& sample : dataset) {
        SampleBatch batch = make_batch(sample.volume, sample.mask, SamplingStrategy::Uniform,
                                       /*border_width=*/0, n_val,
                                       model.config().patch_source_size, rng,
                                       model.config().use_patch_encoder);
        ForwardResult result = model.forward(sample.volume, batch, ad::Mode::Eval);
        std::vector<std::uint8_t> pred(result.probs.size());
        for (std::size_t i = 0; i < pred.size(); ++i) pred[i] = result.probs[i] > 0.5 ? 1 : 0;
        iou_sum += iou(pred, batch.labels);
        dice_sum += dice(pred, batch.labels);
    }
    const double n = static_cast<double>(dataset.size());
    return {iou_sum / n, dice_sum / n};
}

TrainResult train(const TrainConfig& config, OssNet& model,
                  const std::vector<VolumeSample>& train_set,
                  const std::vector<VolumeSample>& val_set, const std::string& checkpoint_path,
                  const std::string& metrics_path) {
    config.validate();
    if (train_set.empty()) throw ArgumentError("training dataset is empty");

    std::ofstream metrics_out;
    if (!metrics_path.empty()) {
        metrics_out.open(metrics_path);
        if (!metrics_out) throw IoError("cannot open metrics log: " + metrics_path);
        metrics_out << "epoch step loss iou dice lr\n";
    }

    Rng rng(config.seed ^ 0x7261696eULL);
    Optimizer optimizer(model.params().trainable(), config);

    TrainResult result;
    int step = 0;
    const int k = config.batch_volumes;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        double epoch_loss = 0.0;
        int epoch_steps = 0;
        for (std::size_t start = 0; start < train_set.size();
             start += static_cast<std::size_t>(k)) {
            model.params().zero_grads();
            // All volumes of one optimizer step share a single tape and a
            // single decoder pass: their sampled locations are concatenated
            // into one batch with per-row global/local latents, so the batch
            // statistics inside the decoder's conditional batch normalization
            // span multiple volumes (matching their eval-mode running-stat
            // use) instead of being recomputed per volume.
            ad::Tape tape(/*record_grad=*/true);
            std::vector<ad::NodePtr> latent_rows;
            std::vector<ad::NodePtr> local_rows;
            std::vector<ad::NodePtr> aux_losses;
            std::vector<double> all_labels;
            std::vector<double> all_locs;
            int total = 0;
            int used = 0;
            double step_loss = 0.0;
            try {
                for (int j = 0;
                     j < k && start + static_cast<std::size_t>(j) < train_set.size(); ++j) {
                    const VolumeSample& sample = train_set[start + static_cast<std::size_t>(j)];
                    const int width = config.border_width >= 0
                                          ? config.border_width
                                          : default_border_width(sample.mask.w);
                    SampleBatch batch =
                        make_batch(sample.volume, sample.mask, config.sampling, width,
                                   config.n_locations, model.config().patch_source_size, rng,
                                   model.config().use_patch_encoder);

                    const OssNet::GlobalEncoding enc = model.encode_global(
                        tape, model.prepare_global_input(sample.volume), ad::Mode::Train);
                    const int n = static_cast<int>(batch.locations.size());
                    latent_rows.push_back(ad::broadcast_rows(tape, enc.latent, n));
                    if (model.config().use_patch_encoder) {
                        local_rows.push_back(
                            model.encode_patches(tape, OssNet::pack_patches(batch.patches)));
                    }
                    const ad::Tensor locs = OssNet::normalize_locations(
                        batch.locations, {sample.volume.d, sample.volume.h, sample.volume.w});
                    all_locs.insert(all_locs.end(), locs.data.begin(), locs.data.end());
                    all_labels.insert(all_labels.end(), batch.labels.begin(),
                                      batch.labels.end());
                    total += n;
                    if (enc.aux) {
                        aux_losses.push_back(ad::bce_mean(
                            tape, enc.aux, aux_labels_maxpool(sample.mask, enc.aux_shape)));
                    }
                    used += 1;
                }
                ad::Tensor locs_tensor({total, 3});
                locs_tensor.data = std::move(all_locs);
                const ad::NodePtr glat = ad::concat_rows(tape, latent_rows);
                const ad::NodePtr local =
                    local_rows.empty() ? nullptr : ad::concat_rows(tape, local_rows);
                const ad::NodePtr probs =
                    model.decode_occupancy(tape, locs_tensor, glat, local, ad::Mode::Train);
                ad::NodePtr loss = ad::bce_mean(tape, probs, all_labels);
                for (const ad::NodePtr& aux_loss : aux_losses) {
                    loss = ad::add_scaled(tape, loss, aux_loss,
                                          config.alpha / static_cast<double>(used));
                }
                step_loss = loss->val.data[0];
                tape.backward(loss);
            } catch (const NumericError& e) {
                throw NumericError("training aborted at epoch " + std::to_string(epoch) +
                                   " step " + std::to_string(step) + ": " + e.what());
            }
            optimizer.step(epoch);
            step += 1;
            epoch_loss += step_loss;
            epoch_steps += 1;
        }

        Rng val_rng(config.seed ^ 0x76616cULL);
        const ValidationResult val =
            validate(model, val_set.empty() ? train_set : val_set, config.n_val, val_rng);
        EpochRecord record;
        record.epoch = epoch;
        record.step = step;
        record.loss = epoch_steps > 0 ? epoch_loss / epoch_steps : 0.0;
        record.iou = val.iou;
        record.dice = val.dice;
        record.lr = lr_schedule(epoch, config.base_lr, config.decay_epochs);
        result.log.push_back(record);
        if (metrics_out) {
            metrics_out << record.epoch << ' ' << record.step << ' ' << record.loss << ' '
                        << record.iou << ' ' << record.dice << ' ' << record.lr << '\n';
            metrics_out.flush();
        }
        if (record.dice > result.best_dice || result.best_epoch < 0) {
            result.best_dice = record.dice;
            result.best_epoch = epoch;
            if (!checkpoint_path.empty()) save_checkpoint(model.params(), checkpoint_path);
        }
    }
    return result;
}

}  // namespace oss
