#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <limits>
#include <string>

#include "pdfnet/errors.hpp"
#include "pdfnet/image_io.hpp"

namespace pdfnet {

constexpr int64_t kCheckpointFormatVersion = 1;

namespace detail {

// Serializes through a temp file plus rename so a crash mid-write never
// leaves a truncated checkpoint under the final name.
inline void save_archive_atomic(const fs::path& path, torch::serialize::OutputArchive& archive) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    try {
        archive.save_to(tmp.string());
    } catch (const c10::Error& e) {
        throw IoError("cannot write " + tmp.string() + ": " + e.what_without_backtrace());
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + " to " + path.string());
}

inline torch::serialize::InputArchive open_archive(const fs::path& path) {
    if (!fs::exists(path)) throw NotFoundError("checkpoint not found: " + path.string());
    torch::serialize::InputArchive archive;
    try {
        archive.load_from(path.string());
    } catch (const c10::Error& e) {
        throw DataError("unreadable checkpoint " + path.string() + ": " +
                        e.what_without_backtrace());
    }
    return archive;
}

inline void check_version(torch::serialize::InputArchive& archive, const fs::path& path) {
    torch::Tensor ver;
    if (!archive.try_read("format_version", ver)) {
        throw VersionError("checkpoint " + path.string() + " has no format_version");
    }
    const auto v = ver.item<int64_t>();
    if (v != kCheckpointFormatVersion) {
        throw VersionError("checkpoint " + path.string() + " has format_version " +
                           std::to_string(v) + "; this build reads version " +
                           std::to_string(kCheckpointFormatVersion));
    }
}

}  // namespace detail

// Model weights plus the serialized run configuration, versioned.
inline void save_model_checkpoint(const fs::path& path, const torch::nn::Module& model,
                                  const std::string& config_text) {
    torch::serialize::OutputArchive archive;
    archive.write("format_version", torch::tensor(kCheckpointFormatVersion));
    archive.write("config", c10::IValue(config_text));
    torch::serialize::OutputArchive params;
    int64_t count = 0;
    for (const auto& p : model.named_parameters()) {
        params.write(p.key(), p.value());
        ++count;
    }
    for (const auto& b : model.named_buffers()) {
        params.write(b.key(), b.value(), /*is_buffer=*/true);
        ++count;
    }
    archive.write("tensor_count", torch::tensor(count));
    archive.write("state", params);
    detail::save_archive_atomic(path, archive);
}

// Restores weights into an already-constructed model of matching
// architecture and returns the stored config text. Missing tensors, shape
// mismatches, and version mismatches are hard errors.
inline std::string load_model_checkpoint(const fs::path& path, torch::nn::Module& model) {
    auto archive = detail::open_archive(path);
    detail::check_version(archive, path);

    c10::IValue config;
    if (!archive.try_read("config", config) || !config.isString()) {
        throw DataError("checkpoint " + path.string() + " has no stored config");
    }
    torch::serialize::InputArchive params;
    archive.read("state", params);

    torch::NoGradGuard ng;
    int64_t restored = 0;
    auto restore = [&](const torch::OrderedDict<std::string, torch::Tensor>& dict, bool buffer) {
        for (const auto& item : dict) {
            torch::Tensor stored;
            if (!params.try_read(item.key(), stored, buffer)) {
                throw DataError("checkpoint " + path.string() + " is missing tensor '" +
                                item.key() + "'");
            }
            if (stored.sizes() != item.value().sizes()) {
                throw DataError("checkpoint tensor '" + item.key() + "' has shape " +
                                c10::str(stored.sizes()) + ", model expects " +
                                c10::str(item.value().sizes()));
            }
            item.value().copy_(stored);
            ++restored;
        }
    };
    restore(model.named_parameters(), false);
    restore(model.named_buffers(), true);

    torch::Tensor count;
    if (archive.try_read("tensor_count", count) && count.item<int64_t>() != restored) {
        throw DataError("checkpoint " + path.string() + " stores " +
                        std::to_string(count.item<int64_t>()) + " tensors, model has " +
                        std::to_string(restored));
    }
    return config.toStringRef();
}

// Reads only the stored config text (to rebuild the architecture before
// loading weights).
inline std::string read_checkpoint_config(const fs::path& path) {
    auto archive = detail::open_archive(path);
    detail::check_version(archive, path);
    c10::IValue config;
    if (!archive.try_read("config", config) || !config.isString()) {
        throw DataError("checkpoint " + path.string() + " has no stored config");
    }
    return config.toStringRef();
}

// Mutable training position, kept separate from model weights so inference
// checkpoints stay small and self-contained.
struct TrainState {
    int64_t epoch = 0;          // epochs fully completed
    int64_t step_in_epoch = 0;  // samples consumed in the current epoch
    int64_t global_step = 0;    // samples consumed overall
    double best_val = std::numeric_limits<double>::infinity();
    bool has_best = false;
};

inline void save_train_state(const fs::path& path, const TrainState& s,
                             torch::optim::Optimizer& optimizer) {
    torch::serialize::OutputArchive archive;
    archive.write("format_version", torch::tensor(kCheckpointFormatVersion));
    archive.write("epoch", torch::tensor(s.epoch));
    archive.write("step_in_epoch", torch::tensor(s.step_in_epoch));
    archive.write("global_step", torch::tensor(s.global_step));
    archive.write("best_val", torch::tensor(s.best_val, torch::kDouble));
    archive.write("has_best", torch::tensor(static_cast<int64_t>(s.has_best)));
    // The stock optimizer serializer keys per-parameter state by tensor
    // addresses, which vary from run to run; keying positionally instead
    // keeps identical runs byte-identical on disk.
    torch::serialize::OutputArchive opt;
    int64_t idx = 0;
    for (const auto& group : optimizer.param_groups()) {
        for (const auto& p : group.params()) {
            auto it = optimizer.state().find(p.unsafeGetTensorImpl());
            const std::string key = "s" + std::to_string(idx++);
            if (it == optimizer.state().end()) continue;
            auto* st = dynamic_cast<torch::optim::AdamWParamState*>(it->second.get());
            if (st == nullptr) throw DataError("optimizer state is not AdamW");
            opt.write(key + "_step", torch::tensor(st->step()));
            opt.write(key + "_exp_avg", st->exp_avg());
            opt.write(key + "_exp_avg_sq", st->exp_avg_sq());
            if (st->max_exp_avg_sq().defined()) {
                opt.write(key + "_max_exp_avg_sq", st->max_exp_avg_sq());
            }
        }
    }
    archive.write("optimizer_param_count", torch::tensor(idx));
    archive.write("optimizer", opt);
    archive.write("rng", at::detail::getDefaultCPUGenerator().get_state());
    detail::save_archive_atomic(path, archive);
}

inline TrainState load_train_state(const fs::path& path, torch::optim::Optimizer& optimizer) {
    auto archive = detail::open_archive(path);
    detail::check_version(archive, path);
    TrainState s;
    auto read_int = [&](const char* key) {
        torch::Tensor t;
        if (!archive.try_read(key, t)) {
            throw DataError("train state " + path.string() + " is missing '" + key + "'");
        }
        return t.item<int64_t>();
    };
    s.epoch = read_int("epoch");
    s.step_in_epoch = read_int("step_in_epoch");
    s.global_step = read_int("global_step");
    torch::Tensor best;
    if (!archive.try_read("best_val", best)) {
        throw DataError("train state " + path.string() + " is missing 'best_val'");
    }
    s.best_val = best.item<double>();
    s.has_best = read_int("has_best") != 0;

    int64_t total_params = 0;
    for (const auto& group : optimizer.param_groups()) {
        total_params += static_cast<int64_t>(group.params().size());
    }
    if (read_int("optimizer_param_count") != total_params) {
        throw DataError("train state " + path.string() +
                        " was written for a different parameter set");
    }
    torch::serialize::InputArchive opt;
    archive.read("optimizer", opt);
    auto& state_map = optimizer.state();
    state_map.clear();
    int64_t idx = 0;
    for (const auto& group : optimizer.param_groups()) {
        for (const auto& p : group.params()) {
            const std::string key = "s" + std::to_string(idx++);
            torch::Tensor step_t;
            if (!opt.try_read(key + "_step", step_t)) continue;
            auto st = std::make_unique<torch::optim::AdamWParamState>();
            st->step(step_t.item<int64_t>());
            torch::Tensor ea, eas, mx;
            if (!opt.try_read(key + "_exp_avg", ea) ||
                !opt.try_read(key + "_exp_avg_sq", eas)) {
                throw DataError("train state " + path.string() +
                                " is missing optimizer moments for " + key);
            }
            st->exp_avg(ea);
            st->exp_avg_sq(eas);
            if (opt.try_read(key + "_max_exp_avg_sq", mx)) st->max_exp_avg_sq(mx);
            state_map[p.unsafeGetTensorImpl()] = std::move(st);
        }
    }
    torch::Tensor rng;
    if (archive.try_read("rng", rng)) {
        at::Generator gen = at::detail::getDefaultCPUGenerator();
        gen.set_state(rng);
    }
    return s;
}

}  // namespace pdfnet
