#pragma once

#include <torch/torch.h>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdfnet/checkpoint.hpp"
#include "pdfnet/config.hpp"
#include "pdfnet/dataset.hpp"
#include "pdfnet/errors.hpp"
#include "pdfnet/evaluate.hpp"
#include "pdfnet/image_io.hpp"
#include "pdfnet/losses.hpp"
#include "pdfnet/network.hpp"

namespace pdfnet {

// Rebuilds the architecture recorded inside a checkpoint and restores its
// weights. The stored config decides the architecture; the caller's config
// only controls how the model is then used.
inline Pdfnet load_model(const fs::path& ckpt, RunConfig* stored_out = nullptr) {
    auto stored = parse_config_string(read_checkpoint_config(ckpt));
    Pdfnet model(network_config_from(stored));
    load_model_checkpoint(ckpt, *model);
    model->eval();
    if (stored_out) *stored_out = stored;
    return model;
}

// Runs the model over every sample of a dataset split, writes one 8-bit
// prediction PNG per sample, scores them against the ground-truth masks, and
// writes metrics.csv / metrics.json next to the predictions.
inline EvalReport cmd_eval(const RunConfig& cfg) {
    if (cfg.checkpoint.empty()) throw ConfigError("eval requires a checkpoint");
    if (cfg.dataset_root.empty()) throw ConfigError("eval requires dataset_root");
    const fs::path root = cfg.dataset_root;
    auto ids = list_sample_ids(root);
    if (ids.empty()) throw EmptyInputError("no samples under " + (root / "images").string());

    auto model = load_model(cfg.checkpoint);
    const auto div = model->cfg.required_divisor();
    if (cfg.resolution_h % div != 0 || cfg.resolution_w % div != 0) {
        throw ConfigError("eval resolution must be divisible by " + std::to_string(div));
    }

    const fs::path out_dir = cfg.out_dir;
    const fs::path pred_dir = out_dir / "predictions";
    fs::create_directories(pred_dir);
    {
        torch::NoGradGuard ng;
        for (const auto& id : ids) {
            auto t = load_triplet(root, id, {cfg.resolution_h, cfg.resolution_w});
            auto out = model->forward(t.image, t.depth);
            write_gray8(pred_dir / (id + ".png"), out.final_prediction);
        }
    }
    const fs::path depth_dir =
        fs::exists(root / "depths") ? root / "depths" : fs::path{};
    auto report = evaluate_directory(pred_dir, root / "masks", depth_dir, cfg.binarize_eval);
    write_eval_csv(out_dir / "metrics.csv", report);
    write_eval_json(out_dir / "metrics.json", report);
    return report;
}

struct PredictResult {
    fs::path mask_path, depth_path;
    double load_ms = 0;     // image + depth decode and resize
    double network_ms = 0;  // forward pass
};

// Single-image inference: writes the mask (8-bit) and refined depth (16-bit)
// at the input's original size and reports where the wall-clock went.
inline PredictResult cmd_predict(const RunConfig& cfg, const fs::path& image_path,
                                 const fs::path& depth_path) {
    if (cfg.checkpoint.empty()) throw ConfigError("predict requires a checkpoint");
    auto model = load_model(cfg.checkpoint);
    const auto div = model->cfg.required_divisor();
    if (cfg.resolution_h % div != 0 || cfg.resolution_w % div != 0) {
        throw ConfigError("predict resolution must be divisible by " + std::to_string(div));
    }

    PredictResult res;
    const auto t0 = std::chrono::steady_clock::now();
    auto image = read_image_rgb(image_path);
    auto depth = read_gray(depth_path);
    const int64_t h0 = image.size(2), w0 = image.size(3);
    if (depth.size(2) != h0 || depth.size(3) != w0) {
        depth = resize_to(depth, h0, w0).clamp(0, 1);
    }
    auto image_in = resize_to(image, cfg.resolution_h, cfg.resolution_w);
    auto depth_in = resize_to(depth, cfg.resolution_h, cfg.resolution_w).clamp(0, 1);
    const auto t1 = std::chrono::steady_clock::now();

    torch::Tensor mask, refined;
    {
        torch::NoGradGuard ng;
        auto out = model->forward(image_in, depth_in);
        mask = resize_to(out.final_prediction, h0, w0).clamp(0, 1);
        refined = resize_to(out.final_depth, h0, w0).clamp(0, 1);
    }
    const auto t2 = std::chrono::steady_clock::now();

    fs::create_directories(cfg.out_dir);
    auto stem = image_path.stem().string();
    res.mask_path = fs::path(cfg.out_dir) / (stem + "_mask.png");
    res.depth_path = fs::path(cfg.out_dir) / (stem + "_depth.png");
    write_gray8(res.mask_path, mask);
    write_gray16(res.depth_path, refined);
    res.load_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    res.network_ms = std::chrono::duration<double, std::milli>(t2 - t1).count();
    return res;
}

struct PriorRow {
    std::string id;
    DepthVarianceSample var;
    // Filled only when term dumps are requested.
    double mu = std::numeric_limits<double>::quiet_NaN();
    double lv = std::numeric_limits<double>::quiet_NaN();
    double lg = std::numeric_limits<double>::quiet_NaN();
};

struct PriorReport {
    std::vector<PriorRow> rows;
    double mean_var_fg = std::numeric_limits<double>::quiet_NaN();
    double mean_var_bg = std::numeric_limits<double>::quiet_NaN();
    double mean_var_all = std::numeric_limits<double>::quiet_NaN();
    double fraction_fg_lt_bg = std::numeric_limits<double>::quiet_NaN();
    int64_t var_pairs = 0;
};

namespace detail {

// Affine-normalizes an arbitrary map into [0,1] for visualization dumps;
// constant maps become zero.
inline torch::Tensor normalize_map(const torch::Tensor& x) {
    auto lo = x.min();
    auto hi = x.max();
    auto span = (hi - lo).clamp_min(1e-12);
    return (x - lo) / span;
}

}  // namespace detail

// Depth-variance analysis of a dataset split: per-sample foreground /
// background / overall variance of the supervision depth, the fraction of
// samples whose foreground is flatter than their background, and (optionally)
// per-sample dumps of the depth-prior loss integrands.
inline PriorReport cmd_analyze_prior(const RunConfig& cfg, bool dump_terms = false) {
    if (cfg.dataset_root.empty()) throw ConfigError("analyze-prior requires dataset_root");
    const fs::path root = cfg.dataset_root;
    auto ids = list_sample_ids(root);
    if (ids.empty()) throw EmptyInputError("no samples under " + (root / "images").string());

    Pdfnet model{nullptr};
    if (dump_terms && !cfg.checkpoint.empty()) model = load_model(cfg.checkpoint);

    const fs::path out_dir = cfg.out_dir;
    fs::create_directories(out_dir);
    const fs::path term_dir = out_dir / "terms";
    if (dump_terms) fs::create_directories(term_dir);

    PriorReport report;
    double vf = 0, vb = 0, va = 0;
    int64_t nf = 0, nb = 0, na = 0, pairs = 0, fg_lt = 0;
    for (const auto& id : ids) {
        auto mask = read_gray(root / "masks" / (id + ".png")).ge(0.5).to(torch::kFloat32);
        auto hq = root / "depths_hq" / (id + ".png");
        auto depth = read_gray(fs::exists(hq) ? hq : root / "depths" / (id + ".png"));
        if (depth.sizes() != mask.sizes()) {
            depth = resize_to(depth, mask.size(2), mask.size(3)).clamp(0, 1);
        }
        PriorRow row;
        row.id = id;
        row.var = depth_variance_report(depth.to(torch::kDouble), mask.to(torch::kDouble));
        if (!std::isnan(row.var.var_fg)) {
            vf += row.var.var_fg;
            ++nf;
        }
        if (!std::isnan(row.var.var_bg)) {
            vb += row.var.var_bg;
            ++nb;
        }
        if (!std::isnan(row.var.var_all)) {
            va += row.var.var_all;
            ++na;
        }
        if (!std::isnan(row.var.var_fg) && !std::isnan(row.var.var_bg)) {
            ++pairs;
            if (row.var.var_fg < row.var.var_bg) ++fg_lt;
        }

        if (dump_terms) {
            torch::Tensor p;
            if (model) {
                torch::NoGradGuard ng;
                auto t = load_triplet(root, id, {cfg.resolution_h, cfg.resolution_w});
                auto out = model->forward(t.image, t.depth);
                p = resize_to(out.final_prediction, mask.size(2), mask.size(3)).clamp(0, 1);
            } else {
                p = mask.clone();  // ground-truth-as-prediction baseline
            }
            auto [lv, terms] = depth_stability_core(p, mask, depth);
            auto lg = depth_continuity_core(p, mask, depth);
            row.mu = terms.mu.item<double>();
            row.lv = lv.item<double>();
            row.lg = lg.item<double>();
            write_gray8(term_dir / (id + "_py.png"), terms.py);
            write_gray16(term_dir / (id + "_diff.png"), detail::normalize_map(terms.diff));
            write_gray8(term_dir / (id + "_fp.png"), terms.fp);
            write_gray8(term_dir / (id + "_fn.png"), terms.fn);
            write_gray16(term_dir / (id + "_weight_v.png"), detail::normalize_map(terms.weight_v));
            write_gray16(term_dir / (id + "_weight_g.png"), detail::normalize_map(terms.weight_g));
        }
        report.rows.push_back(std::move(row));
    }
    if (nf) report.mean_var_fg = vf / nf;
    if (nb) report.mean_var_bg = vb / nb;
    if (na) report.mean_var_all = va / na;
    report.var_pairs = pairs;
    if (pairs) report.fraction_fg_lt_bg = static_cast<double>(fg_lt) / pairs;

    std::ofstream csv(out_dir / "prior_stats.csv");
    if (!csv) throw IoError("cannot write " + (out_dir / "prior_stats.csv").string());
    csv << "sample_id,var_fg,var_bg,var_all";
    if (dump_terms) csv << ",mu,lv,lg";
    csv << '\n';
    for (const auto& row : report.rows) {
        csv << row.id << ',' << detail::fmt_double(row.var.var_fg) << ','
            << detail::fmt_double(row.var.var_bg) << ',' << detail::fmt_double(row.var.var_all);
        if (dump_terms) {
            csv << ',' << detail::fmt_double(row.mu) << ',' << detail::fmt_double(row.lv) << ','
                << detail::fmt_double(row.lg);
        }
        csv << '\n';
    }
    csv.flush();
    if (!csv) throw IoError("cannot write " + (out_dir / "prior_stats.csv").string());

    auto num = [](double v) -> nlohmann::json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    nlohmann::json j;
    j["aggregate"] = {{"var_fg", num(report.mean_var_fg)},
                      {"var_bg", num(report.mean_var_bg)},
                      {"var_all", num(report.mean_var_all)},
                      {"fraction_var_fg_lt_bg", num(report.fraction_fg_lt_bg)},
                      {"var_pairs", report.var_pairs},
                      {"samples", report.rows.size()}};
    j["per_sample"] = nlohmann::json::array();
    for (const auto& row : report.rows) {
        j["per_sample"].push_back({{"sample_id", row.id},
                                   {"var_fg", num(row.var.var_fg)},
                                   {"var_bg", num(row.var.var_bg)},
                                   {"var_all", num(row.var.var_all)}});
    }
    std::ofstream js(out_dir / "prior_stats.json");
    if (!js) throw IoError("cannot write " + (out_dir / "prior_stats.json").string());
    js << j.dump(2) << '\n';
    return report;
}

}  // namespace pdfnet
