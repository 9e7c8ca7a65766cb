#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pdfnet/errors.hpp"
#include "pdfnet/image_io.hpp"
#include "pdfnet/layers.hpp"
#include "pdfnet/metrics.hpp"

namespace pdfnet {

struct EvalRow {
    std::string id;
    double fmax = 0, fw = 0, em = 0, sm = 0, mae = 0;
    DepthVarianceSample var;
};

struct EvalReport {
    std::vector<EvalRow> rows;
    double mean_fmax = 0, mean_fw = 0, mean_em = 0, mean_sm = 0, mean_mae = 0;
    // NaN-skipping depth-variance aggregates.
    double mean_var_fg = std::numeric_limits<double>::quiet_NaN();
    double mean_var_bg = std::numeric_limits<double>::quiet_NaN();
    double mean_var_all = std::numeric_limits<double>::quiet_NaN();
    double fraction_fg_lt_bg = std::numeric_limits<double>::quiet_NaN();
    int64_t var_pairs = 0;
    std::vector<std::string> unpaired_pred, unpaired_gt;

    bool complete() const { return unpaired_pred.empty() && unpaired_gt.empty(); }
};

namespace detail {

inline std::set<std::string> png_stems(const fs::path& dir) {
    std::set<std::string> out;
    if (!fs::exists(dir)) {
        throw NotFoundError("missing directory: " + dir.string());
    }
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".png") out.insert(e.path().stem().string());
    }
    return out;
}

inline void finalize_aggregates(EvalReport& r) {
    const auto n = static_cast<double>(r.rows.size());
    double vf = 0, vb = 0, va = 0;
    int64_t nf = 0, nb = 0, na = 0, pairs = 0, fg_lt = 0;
    for (const auto& row : r.rows) {
        r.mean_fmax += row.fmax / n;
        r.mean_fw += row.fw / n;
        r.mean_em += row.em / n;
        r.mean_sm += row.sm / n;
        r.mean_mae += row.mae / n;
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
    }
    if (nf) r.mean_var_fg = vf / nf;
    if (nb) r.mean_var_bg = vb / nb;
    if (na) r.mean_var_all = va / na;
    r.var_pairs = pairs;
    if (pairs) r.fraction_fg_lt_bg = static_cast<double>(fg_lt) / pairs;
}

}  // namespace detail

// Pairs prediction and ground-truth PNGs by stem, computes the five metrics
// per sample (plus depth-variance statistics when a depth directory is
// given), and aggregates by arithmetic mean. Unpaired files are listed and
// excluded. Throws EmptyInputError when nothing pairs up.
inline EvalReport evaluate_directory(const fs::path& pred_dir, const fs::path& gt_dir,
                                     const fs::path& depth_dir = {}, bool binarize = false) {
    auto preds = detail::png_stems(pred_dir);
    auto gts = detail::png_stems(gt_dir);
    EvalReport report;
    std::vector<std::string> shared;
    std::set_intersection(preds.begin(), preds.end(), gts.begin(), gts.end(),
                          std::back_inserter(shared));
    std::set_difference(preds.begin(), preds.end(), gts.begin(), gts.end(),
                        std::back_inserter(report.unpaired_pred));
    std::set_difference(gts.begin(), gts.end(), preds.begin(), preds.end(),
                        std::back_inserter(report.unpaired_gt));
    if (shared.empty()) {
        throw EmptyInputError("no paired samples between " + pred_dir.string() + " and " +
                              gt_dir.string());
    }
    for (const auto& id : shared) {
        auto gt = read_gray(gt_dir / (id + ".png")).ge(0.5).to(torch::kDouble);
        auto pred = read_gray(pred_dir / (id + ".png")).to(torch::kDouble);
        if (pred.sizes() != gt.sizes()) {
            pred = resize_to(pred, gt.size(2), gt.size(3)).clamp(0, 1);
        }
        if (binarize) pred = pred.ge(0.5).to(torch::kDouble);
        EvalRow row;
        row.id = id;
        row.fmax = f_max(pred, gt);
        row.fw = weighted_f_measure(pred, gt);
        row.em = e_measure(pred, gt);
        row.sm = s_measure(pred, gt);
        row.mae = mae(pred, gt);
        if (!depth_dir.empty()) {
            auto dpath = depth_dir / (id + ".png");
            if (fs::exists(dpath)) {
                auto depth = read_gray(dpath).to(torch::kDouble);
                if (depth.sizes() != gt.sizes()) depth = resize_to(depth, gt.size(2), gt.size(3));
                row.var = depth_variance_report(depth, gt);
            }
        }
        report.rows.push_back(std::move(row));
    }
    detail::finalize_aggregates(report);
    return report;
}

namespace detail {

inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void write_eval_csv(const fs::path& path, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "sample_id,fmax,fw,em,sm,mae,var_fg,var_bg,var_all\n";
    for (const auto& row : r.rows) {
        out << row.id << ',' << detail::fmt_double(row.fmax) << ',' << detail::fmt_double(row.fw)
            << ',' << detail::fmt_double(row.em) << ',' << detail::fmt_double(row.sm) << ','
            << detail::fmt_double(row.mae) << ',' << detail::fmt_double(row.var.var_fg) << ','
            << detail::fmt_double(row.var.var_bg) << ',' << detail::fmt_double(row.var.var_all)
            << '\n';
    }
    out.flush();
    if (!out) throw IoError("cannot write " + path.string());
}

inline nlohmann::json eval_report_json(const EvalReport& r) {
    auto num = [](double v) -> nlohmann::json {
        if (std::isnan(v)) return nullptr;
        return v;
    };
    nlohmann::json j;
    j["aggregate"] = {{"fmax", r.mean_fmax},
                      {"fw", r.mean_fw},
                      {"em", r.mean_em},
                      {"sm", r.mean_sm},
                      {"mae", r.mean_mae},
                      {"var_fg", num(r.mean_var_fg)},
                      {"var_bg", num(r.mean_var_bg)},
                      {"var_all", num(r.mean_var_all)},
                      {"fraction_var_fg_lt_bg", num(r.fraction_fg_lt_bg)},
                      {"var_pairs", r.var_pairs},
                      {"samples", r.rows.size()}};
    j["per_sample"] = nlohmann::json::array();
    for (const auto& row : r.rows) {
        j["per_sample"].push_back({{"sample_id", row.id},
                                   {"fmax", row.fmax},
                                   {"fw", row.fw},
                                   {"em", row.em},
                                   {"sm", row.sm},
                                   {"mae", row.mae},
                                   {"var_fg", num(row.var.var_fg)},
                                   {"var_bg", num(row.var.var_bg)},
                                   {"var_all", num(row.var.var_all)}});
    }
    j["unpaired_predictions"] = r.unpaired_pred;
    j["unpaired_ground_truth"] = r.unpaired_gt;
    j["complete"] = r.complete();
    return j;
}

inline void write_eval_json(const fs::path& path, const EvalReport& r) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << eval_report_json(r).dump(2) << '\n';
    out.flush();
    if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace pdfnet
