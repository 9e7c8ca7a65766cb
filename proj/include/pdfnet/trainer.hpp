#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdfnet/checkpoint.hpp"
#include "pdfnet/config.hpp"
#include "pdfnet/dataset.hpp"
#include "pdfnet/errors.hpp"
#include "pdfnet/losses.hpp"
#include "pdfnet/metrics.hpp"
#include "pdfnet/network.hpp"
#include "pdfnet/synthetic.hpp"

namespace pdfnet {

// Stream seed for (epoch, index): independent of dataset size and of any
// other sample, so a resumed run replays the exact same draws.
inline uint64_t derive_seed(uint64_t base, uint64_t epoch, uint64_t index) {
    return detail::mix_seed(detail::mix_seed(base, epoch), index);
}

inline void apply_determinism(const RunConfig& cfg) {
    if (cfg.deterministic && cfg.threads > 0) {
        at::set_num_threads(static_cast<int>(cfg.threads));
    }
    torch::manual_seed(static_cast<uint64_t>(cfg.seed));
}

struct TrainSummary {
    std::vector<int64_t> step_numbers;  // global sample count after each batch
    std::vector<double> step_losses;    // matching batch totals
    fs::path last_checkpoint;
    fs::path best_checkpoint;
    int64_t epochs_run = 0;
    double final_val_mae = std::numeric_limits<double>::quiet_NaN();
};

inline double run_validation(Pdfnet& model, const RunConfig& cfg) {
    const fs::path root = cfg.val_root;
    auto ids = list_sample_ids(root);
    if (ids.empty()) throw EmptyInputError("no validation samples under " + root.string());
    torch::NoGradGuard ng;
    const bool was_training = model->is_training();
    model->eval();
    double acc = 0;
    for (const auto& id : ids) {
        auto t = load_triplet(root, id, {cfg.resolution_h, cfg.resolution_w});
        auto out = model->forward(t.image, t.depth);
        acc += mae(out.final_prediction.to(torch::kDouble), t.mask.to(torch::kDouble));
    }
    if (was_training) model->train();
    return acc / static_cast<double>(ids.size());
}

// Full training command: deterministic data order, per-sample augmentation
// streams, JSON-line logging, epoch/step checkpoints, best-model tracking,
// and exact resume from a saved state. Throws NumericsError on a non-finite
// loss, leaving the last written checkpoint in place.
inline TrainSummary cmd_train(const RunConfig& cfg) {
    if (cfg.dataset_root.empty()) throw ConfigError("training requires dataset_root");
    if (cfg.batch_size < 1 || cfg.grad_accum < 1) {
        throw ConfigError("batch_size and grad_accum must be >= 1");
    }
    const fs::path root = cfg.dataset_root;
    auto ids = list_sample_ids(root);
    if (ids.empty()) {
        throw EmptyInputError("no training samples under " + (root / "images").string());
    }

    apply_determinism(cfg);
    Pdfnet model(network_config_from(cfg));
    model->train();

    torch::optim::AdamWOptions opt_opts(cfg.learning_rate);
    opt_opts.betas(std::make_tuple(cfg.beta1, cfg.beta2)).weight_decay(cfg.weight_decay);
    torch::optim::AdamW optimizer(model->parameters(), opt_opts);

    TrainState state;
    if (!cfg.checkpoint.empty()) {
        load_model_checkpoint(cfg.checkpoint, *model);
        fs::path spath = cfg.checkpoint;
        spath += ".state";
        if (fs::exists(spath)) {
            state = load_train_state(spath, optimizer);
        }
    }

    const fs::path out_dir = cfg.out_dir;
    fs::create_directories(out_dir);
    std::ofstream log(out_dir / "train_log.jsonl", std::ios::app);
    if (!log) throw IoError("cannot write " + (out_dir / "train_log.jsonl").string());
    const std::string config_text = serialize_config(cfg);

    const auto toggles = loss_toggles_from(cfg);
    const auto weights = loss_weights_from(cfg);
    const auto aug = augment_options_from(cfg);
    const std::pair<int64_t, int64_t> res{cfg.resolution_h, cfg.resolution_w};

    auto save_pair = [&](const fs::path& base) {
        save_model_checkpoint(base, *model, config_text);
        fs::path spath = base;
        spath += ".state";
        save_train_state(spath, state, optimizer);
        return base;
    };

    TrainSummary summary;
    int64_t accum = 0;
    int64_t batches_done = 0;
    optimizer.zero_grad();
    for (int64_t epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
        auto order = ids;
        std::mt19937_64 shuffle_rng(derive_seed(cfg.seed, epoch, 0xC0FFEEULL));
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        const int64_t start = (epoch == state.epoch) ? state.step_in_epoch : 0;
        for (int64_t i = start; i < static_cast<int64_t>(order.size()); i += cfg.batch_size) {
            const auto tick = std::chrono::steady_clock::now();
            const int64_t take =
                std::min<int64_t>(cfg.batch_size, static_cast<int64_t>(order.size()) - i);
            std::vector<torch::Tensor> images, depths, sups, masks;
            for (int64_t k = 0; k < take; ++k) {
                auto t = load_triplet(root, order[i + k], res);
                if (aug.enabled) {
                    t = augment(t, aug, derive_seed(cfg.seed, epoch, static_cast<uint64_t>(i + k)));
                }
                images.push_back(t.image);
                depths.push_back(t.depth);
                sups.push_back(t.depth_supervision);
                masks.push_back(t.mask);
            }
            auto out = model->forward(torch::cat(images), torch::cat(depths));
            auto loss = total_loss(out, torch::cat(masks), torch::cat(sups), toggles, weights);
            if (!std::isfinite(loss.report.total)) {
                throw NumericsError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", sample " + std::to_string(i) +
                                    "; last checkpoint retained");
            }
            (loss.value / static_cast<double>(cfg.grad_accum)).backward();
            ++accum;
            if (accum == cfg.grad_accum) {
                optimizer.step();
                optimizer.zero_grad();
                accum = 0;
            }
            state.global_step += take;
            state.step_in_epoch = i + take;
            ++batches_done;
            summary.step_numbers.push_back(state.global_step);
            summary.step_losses.push_back(loss.report.total);

            const double ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - tick)
                    .count();
            if (cfg.log_every > 0 && batches_done % cfg.log_every == 0) {
                nlohmann::json j{{"event", "step"},
                                 {"step", state.global_step},
                                 {"epoch", epoch},
                                 {"index", i},
                                 {"total", loss.report.total},
                                 {"final_f", loss.report.final_f},
                                 {"wbce", loss.report.wbce},
                                 {"wiou", loss.report.wiou},
                                 {"ssim", loss.report.ssim},
                                 {"linte", loss.report.linte},
                                 {"final_silog", loss.report.final_silog},
                                 {"lr", cfg.learning_rate},
                                 {"ms", ms}};
                log << j.dump() << '\n' << std::flush;
            }
            // Step checkpoints land only on accumulation boundaries so the
            // restored optimizer never misses half-accumulated gradients.
            if (cfg.checkpoint_every_steps > 0 && accum == 0 &&
                state.global_step % cfg.checkpoint_every_steps == 0) {
                save_pair(out_dir / ("ckpt_step_" + std::to_string(state.global_step) + ".pt"));
            }
        }
        if (accum > 0) {
            optimizer.step();
            optimizer.zero_grad();
            accum = 0;
        }
        state.epoch = epoch + 1;
        state.step_in_epoch = 0;
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            save_pair(out_dir / ("ckpt_epoch_" + std::to_string(epoch + 1) + ".pt"));
        }
        summary.last_checkpoint = save_pair(out_dir / "last.pt");
        log << nlohmann::json{{"event", "epoch"},
                              {"epoch", epoch + 1},
                              {"checkpoint", summary.last_checkpoint.string()}}
                   .dump()
            << '\n'
            << std::flush;

        if (!cfg.val_root.empty()) {
            const double val_mae = run_validation(model, cfg);
            summary.final_val_mae = val_mae;
            const bool improved = !state.has_best || val_mae < state.best_val;
            if (improved) {
                state.best_val = val_mae;
                state.has_best = true;
                save_model_checkpoint(out_dir / "best.pt", *model, config_text);
                summary.best_checkpoint = out_dir / "best.pt";
            }
            log << nlohmann::json{{"event", "val"},
                                  {"epoch", epoch + 1},
                                  {"mae", val_mae},
                                  {"improved", improved}}
                       .dump()
                << '\n'
                << std::flush;
        }
        summary.epochs_run = epoch + 1;
    }
    return summary;
}

}  // namespace pdfnet
