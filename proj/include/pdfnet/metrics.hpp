#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pdfnet/errors.hpp"

namespace pdfnet {

namespace detail {

// Metrics run in double precision on 2-D maps regardless of model precision.
inline torch::Tensor metric_map(const torch::Tensor& x, const char* what) {
    auto m = x.detach().to(torch::kDouble).squeeze();
    if (m.dim() != 2) {
        throw ShapeError(std::string(what) + ": expected a single-channel 2-D map");
    }
    return m.contiguous();
}

inline void check_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
    if (a.sizes() != b.sizes()) {
        throw ShapeError(std::string(what) + ": prediction/mask shape mismatch");
    }
}

constexpr double kMatlabEps = 2.220446049250313e-16;

}  // namespace detail

inline double mae(const torch::Tensor& pred, const torch::Tensor& gt) {
    auto p = detail::metric_map(pred, "mae");
    auto m = detail::metric_map(gt, "mae");
    detail::check_same_shape(p, m, "mae");
    return (p - m).abs().mean().item<double>();
}

struct FMeasureCurve {
    std::array<double, 256> precision{}, recall{}, fbeta{};
    double f_max = 0;
};

// Precision/recall/F-beta at the 256 thresholds k/255 (prediction counted as
// foreground when p >= threshold), beta^2 = 0.3. Thresholds with an empty
// prediction or empty ground truth score F = 0.
inline FMeasureCurve f_measure_curve(const torch::Tensor& pred, const torch::Tensor& gt,
                                     double beta2 = 0.3) {
    auto p = detail::metric_map(pred, "f_measure");
    auto m = detail::metric_map(gt, "f_measure");
    detail::check_same_shape(p, m, "f_measure");
    const auto h = p.size(0), w = p.size(1);
    auto pa = p.accessor<double, 2>();
    auto ma = m.accessor<double, 2>();
    // Histogram by the bin floor(255*p): p >= k/255 is exactly bin >= k.
    std::array<int64_t, 256> tp_hist{}, pos_hist{};
    int64_t total_fg = 0;
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            int64_t bin = static_cast<int64_t>(std::floor(pa[r][c] * 255.0));
            bin = std::clamp<int64_t>(bin, 0, 255);
            const bool fg = ma[r][c] > 0.5;
            pos_hist[bin] += 1;
            if (fg) {
                tp_hist[bin] += 1;
                ++total_fg;
            }
        }
    }
    FMeasureCurve out;
    int64_t tp = 0, pos = 0;
    std::array<int64_t, 256> tp_at{}, pos_at{};
    for (int k = 255; k >= 0; --k) {
        tp += tp_hist[k];
        pos += pos_hist[k];
        tp_at[k] = tp;
        pos_at[k] = pos;
    }
    for (int k = 0; k < 256; ++k) {
        const double prec = pos_at[k] > 0 ? static_cast<double>(tp_at[k]) / pos_at[k] : 0.0;
        const double rec = total_fg > 0 ? static_cast<double>(tp_at[k]) / total_fg : 0.0;
        out.precision[k] = prec;
        out.recall[k] = rec;
        const double den = beta2 * prec + rec;
        out.fbeta[k] = (pos_at[k] == 0 || total_fg == 0 || den == 0)
                           ? 0.0
                           : (1 + beta2) * prec * rec / den;
        out.f_max = std::max(out.f_max, out.fbeta[k]);
    }
    return out;
}

inline double f_max(const torch::Tensor& pred, const torch::Tensor& gt, double beta2 = 0.3) {
    return f_measure_curve(pred, gt, beta2).f_max;
}

namespace detail {

// Exact nearest-foreground assignment: for every pixel, the squared Euclidean
// distance to the closest gt pixel and that pixel's coordinates. Ties are
// broken toward the smaller column, then the smaller row (pinned so the
// independent oracle can reproduce the assignment bit-for-bit).
struct NearestForeground {
    std::vector<double> dist;     // row-major Euclidean distance
    std::vector<int64_t> index;   // row-major linear index of nearest gt pixel
};

inline NearestForeground nearest_foreground(const std::vector<uint8_t>& gt, int64_t h, int64_t w) {
    const auto inf = std::numeric_limits<double>::infinity();
    // Phase 1: per column, nearest gt row (tie -> smaller row).
    std::vector<double> dv(h * w, inf);
    std::vector<int64_t> rbest(h * w, -1);
    for (int64_t c = 0; c < w; ++c) {
        int64_t last = -1;
        for (int64_t r = 0; r < h; ++r) {  // nearest at or above
            if (gt[r * w + c]) last = r;
            if (last >= 0) {
                dv[r * w + c] = static_cast<double>(r - last);
                rbest[r * w + c] = last;
            }
        }
        last = -1;
        for (int64_t r = h - 1; r >= 0; --r) {  // nearest below, strict improvement only
            if (gt[r * w + c]) last = r;
            if (last >= 0 && static_cast<double>(last - r) < dv[r * w + c]) {
                dv[r * w + c] = static_cast<double>(last - r);
                rbest[r * w + c] = last;
            }
        }
    }
    // Phase 2: combine columns (tie -> smaller column via strict < scan).
    NearestForeground out;
    out.dist.assign(h * w, inf);
    out.index.assign(h * w, -1);
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            if (gt[r * w + c]) {
                out.dist[r * w + c] = 0;
                out.index[r * w + c] = r * w + c;
                continue;
            }
            double best = inf;
            int64_t best_idx = -1;
            for (int64_t cc = 0; cc < w; ++cc) {
                if (rbest[r * w + cc] < 0) continue;
                const double dc = static_cast<double>(c - cc);
                const double d2 = dc * dc + dv[r * w + cc] * dv[r * w + cc];
                if (d2 < best) {
                    best = d2;
                    best_idx = rbest[r * w + cc] * w + cc;
                }
            }
            out.dist[r * w + c] = std::sqrt(best);
            out.index[r * w + c] = best_idx;
        }
    }
    return out;
}

}  // namespace detail

// Dependency-weighted F-measure: absolute errors, with background errors
// replaced by the error of the nearest foreground pixel, diffused by a 7x7
// sigma-5 Gaussian (zero padding), and importance-weighted by distance decay;
// combined with beta^2 = 1. Empty ground truth scores 0.
inline double weighted_f_measure(const torch::Tensor& pred, const torch::Tensor& gt) {
    auto p = detail::metric_map(pred, "weighted_f");
    auto m = detail::metric_map(gt, "weighted_f");
    detail::check_same_shape(p, m, "weighted_f");
    const int64_t h = p.size(0), w = p.size(1);
    auto pa = p.accessor<double, 2>();
    auto ma = m.accessor<double, 2>();
    std::vector<uint8_t> fg(h * w);
    int64_t fg_count = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            fg[r * w + c] = ma[r][c] > 0.5 ? 1 : 0;
            fg_count += fg[r * w + c];
        }
    if (fg_count == 0) return 0.0;

    std::vector<double> err(h * w), err_sub(h * w);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            err[r * w + c] = std::abs(pa[r][c] - (fg[r * w + c] ? 1.0 : 0.0));
        }
    auto nearest = detail::nearest_foreground(fg, h, w);
    for (int64_t i = 0; i < h * w; ++i) {
        err_sub[i] = fg[i] ? err[i] : err[nearest.index[i]];
    }

    // 7x7 Gaussian, sigma 5, normalized, zero padding.
    std::array<double, 7> g1{};
    double gsum = 0;
    for (int i = 0; i < 7; ++i) {
        g1[i] = std::exp(-((i - 3) * (i - 3)) / (2.0 * 5.0 * 5.0));
        gsum += g1[i];
    }
    double norm = gsum * gsum;
    std::vector<double> diffused(h * w, 0.0);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            double acc = 0;
            for (int dr = -3; dr <= 3; ++dr)
                for (int dc = -3; dc <= 3; ++dc) {
                    const int64_t rr = r + dr, cc = c + dc;
                    if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                    acc += g1[dr + 3] * g1[dc + 3] * err_sub[rr * w + cc];
                }
            diffused[r * w + c] = acc / norm;
        }

    double tpw = 0, fpw = 0, ew_fg_sum = 0;
    for (int64_t i = 0; i < h * w; ++i) {
        double e = err[i];
        if (fg[i] && diffused[i] < e) e = diffused[i];
        const double importance =
            fg[i] ? 1.0 : 2.0 - std::exp(std::log(0.5) / 5.0 * nearest.dist[i]);
        const double ew = e * importance;
        if (fg[i]) {
            ew_fg_sum += ew;
        } else {
            fpw += ew;
        }
    }
    tpw = static_cast<double>(fg_count) - ew_fg_sum;
    const double recall = 1.0 - ew_fg_sum / fg_count;
    const double precision = tpw / (detail::kMatlabEps + tpw + fpw);
    return 2.0 * recall * precision / (detail::kMatlabEps + recall + precision);
}

namespace detail {

// Sample standard deviation (N-1), with a single element defined as 0.
inline double sample_std(const std::vector<double>& xs, double mean) {
    if (xs.size() <= 1) return 0.0;
    double acc = 0;
    for (double x : xs) acc += (x - mean) * (x - mean);
    return std::sqrt(acc / (xs.size() - 1));
}

inline double object_score(const std::vector<double>& region_values) {
    double mean = 0;
    for (double v : region_values) mean += v;
    mean /= region_values.size();
    const double sigma = sample_std(region_values, mean);
    return 2.0 * mean / (mean * mean + 1.0 + sigma + kMatlabEps);
}

// Regional structural similarity on a sub-window, N-1 normalized moments.
// A single-element or perfectly flat pair counts as aligned (score 1).
inline double region_ssim(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sx = 0, sy = 0, sxy = 0;
    if (x.size() > 1) {
        for (size_t i = 0; i < x.size(); ++i) {
            sx += (x[i] - mx) * (x[i] - mx);
            sy += (y[i] - my) * (y[i] - my);
            sxy += (x[i] - mx) * (y[i] - my);
        }
        sx /= n - 1;
        sy /= n - 1;
        sxy /= n - 1;
    }
    const double alpha = 4.0 * mx * my * sxy;
    const double beta = (mx * mx + my * my) * (sx + sy);
    if (alpha != 0.0) return alpha / (beta + kMatlabEps);
    return beta == 0.0 ? 1.0 : 0.0;
}

}  // namespace detail

// Structure measure: mean of an object-level similarity (foreground and
// background treated as dual regions) and a region-level similarity over the
// 4 quadrants split at the mask centroid. Degenerate masks fall back to the
// published rules: empty -> 1 - mean(P), full -> mean(P).
inline double s_measure(const torch::Tensor& pred, const torch::Tensor& gt, double alpha = 0.5) {
    auto p = detail::metric_map(pred, "s_measure");
    auto m = detail::metric_map(gt, "s_measure");
    detail::check_same_shape(p, m, "s_measure");
    const int64_t h = p.size(0), w = p.size(1);
    auto pa = p.accessor<double, 2>();
    auto ma = m.accessor<double, 2>();
    int64_t fg_count = 0;
    double p_sum = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            fg_count += ma[r][c] > 0.5 ? 1 : 0;
            p_sum += pa[r][c];
        }
    const double n = static_cast<double>(h * w);
    if (fg_count == 0) return std::max(0.0, 1.0 - p_sum / n);
    if (fg_count == h * w) return std::max(0.0, p_sum / n);

    // Object term.
    std::vector<double> fg_vals, bg_vals;
    fg_vals.reserve(fg_count);
    bg_vals.reserve(h * w - fg_count);
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            if (ma[r][c] > 0.5) {
                fg_vals.push_back(pa[r][c]);
            } else {
                bg_vals.push_back(1.0 - pa[r][c]);
            }
        }
    const double u = static_cast<double>(fg_count) / n;
    const double s_object =
        u * detail::object_score(fg_vals) + (1 - u) * detail::object_score(bg_vals);

    // Region term: centroid split (1-indexed rounding, half away from zero).
    double col_moment = 0, row_moment = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c)
            if (ma[r][c] > 0.5) {
                col_moment += static_cast<double>(c + 1);
                row_moment += static_cast<double>(r + 1);
            }
    const int64_t cx = std::llround(col_moment / fg_count);
    const int64_t cy = std::llround(row_moment / fg_count);
    const std::array<std::pair<int64_t, int64_t>, 2> row_ranges{{{0, cy}, {cy, h}}};
    const std::array<std::pair<int64_t, int64_t>, 2> col_ranges{{{0, cx}, {cx, w}}};
    double s_region = 0;
    for (const auto& rr : row_ranges) {
        for (const auto& cr : col_ranges) {
            std::vector<double> px, mx;
            for (int64_t r = rr.first; r < rr.second; ++r)
                for (int64_t c = cr.first; c < cr.second; ++c) {
                    px.push_back(pa[r][c]);
                    mx.push_back(ma[r][c] > 0.5 ? 1.0 : 0.0);
                }
            if (px.empty()) continue;
            const double weight = static_cast<double>(px.size()) / n;
            s_region += weight * detail::region_ssim(px, mx);
        }
    }
    return std::max(0.0, alpha * s_object + (1 - alpha) * s_region);
}

// Enhanced-alignment measure at the adaptive threshold min(2*mean(P), 1):
// mean over pixels of ((2*phi_gt*phi_fm)/(phi_gt^2+phi_fm^2)+1)^2/4 where phi
// are the mean-centered binary maps; degenerate masks use the published
// fallbacks (empty -> mean(1-FM), full -> mean(FM)).
inline double e_measure(const torch::Tensor& pred, const torch::Tensor& gt) {
    auto p = detail::metric_map(pred, "e_measure");
    auto m = detail::metric_map(gt, "e_measure");
    detail::check_same_shape(p, m, "e_measure");
    const int64_t h = p.size(0), w = p.size(1);
    auto pa = p.accessor<double, 2>();
    auto ma = m.accessor<double, 2>();
    const double n = static_cast<double>(h * w);
    double p_mean = 0;
    int64_t fg_count = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            p_mean += pa[r][c];
            fg_count += ma[r][c] > 0.5 ? 1 : 0;
        }
    p_mean /= n;
    const double threshold = std::min(2.0 * p_mean, 1.0);
    double fm_mean = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) fm_mean += pa[r][c] >= threshold ? 1.0 : 0.0;
    fm_mean /= n;

    double acc = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            const double fm = pa[r][c] >= threshold ? 1.0 : 0.0;
            const double g = ma[r][c] > 0.5 ? 1.0 : 0.0;
            if (fg_count == 0) {
                acc += 1.0 - fm;
            } else if (fg_count == h * w) {
                acc += fm;
            } else {
                const double ag = g - static_cast<double>(fg_count) / n;
                const double af = fm - fm_mean;
                const double align =
                    2.0 * ag * af / (ag * ag + af * af + detail::kMatlabEps);
                acc += (align + 1.0) * (align + 1.0) / 4.0;
            }
        }
    return acc / n;
}

// Population variance of depth inside / outside / regardless of the mask;
// empty regions yield NaN sentinels that aggregation must skip.
struct DepthVarianceSample {
    double var_fg = std::numeric_limits<double>::quiet_NaN();
    double var_bg = std::numeric_limits<double>::quiet_NaN();
    double var_all = std::numeric_limits<double>::quiet_NaN();
};

inline DepthVarianceSample depth_variance_report(const torch::Tensor& depth,
                                                 const torch::Tensor& gt) {
    auto d = detail::metric_map(depth, "depth_variance");
    auto m = detail::metric_map(gt, "depth_variance");
    detail::check_same_shape(d, m, "depth_variance");
    auto da = d.accessor<double, 2>();
    auto ma = m.accessor<double, 2>();
    const int64_t h = d.size(0), w = d.size(1);
    auto variance = [](double sum, double sq, int64_t count) {
        if (count == 0) return std::numeric_limits<double>::quiet_NaN();
        const double mean = sum / count;
        return std::max(0.0, sq / count - mean * mean);
    };
    double s_fg = 0, q_fg = 0, s_bg = 0, q_bg = 0;
    int64_t n_fg = 0, n_bg = 0;
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c) {
            const double v = da[r][c];
            if (ma[r][c] > 0.5) {
                s_fg += v;
                q_fg += v * v;
                ++n_fg;
            } else {
                s_bg += v;
                q_bg += v * v;
                ++n_bg;
            }
        }
    DepthVarianceSample out;
    out.var_fg = variance(s_fg, q_fg, n_fg);
    out.var_bg = variance(s_bg, q_bg, n_bg);
    out.var_all = variance(s_fg + s_bg, q_fg + q_bg, n_fg + n_bg);
    return out;
}

}  // namespace pdfnet
