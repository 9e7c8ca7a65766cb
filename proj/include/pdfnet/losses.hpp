#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "pdfnet/errors.hpp"
#include "pdfnet/network.hpp"

namespace pdfnet {

namespace F = torch::nn::functional;

inline void require_finite(const torch::Tensor& t, const char* what) {
    if (!t.isfinite().all().item<bool>()) {
        throw NumericsError(std::string("non-finite values in ") + what);
    }
}

namespace detail {

// Per-sample spatial mean of a BxCxHxW map -> B vector.
inline torch::Tensor sample_mean(const torch::Tensor& x) { return x.flatten(1).mean(1); }

inline torch::Tensor sample_sum(const torch::Tensor& x) { return x.flatten(1).sum(1); }

constexpr double kLogEps = 1e-7;    // clamp floor inside -log(P_y)
constexpr double kDepthEps = 1e-6;  // clamp floor inside log-depth

}  // namespace detail

// Masked mean depth per sample: sum(D*M)/sum(M). Empty masks yield NaN as an
// explicit "undefined" sentinel; the stability loss treats such samples as
// zero-loss instead of consuming the sentinel.
inline torch::Tensor mask_mean_depth(const torch::Tensor& depth, const torch::Tensor& mask) {
    if (depth.sizes() != mask.sizes()) throw ShapeError("mask_mean_depth shape mismatch");
    auto count = detail::sample_sum(mask);
    auto total = detail::sample_sum(depth * mask);
    auto nan = torch::full_like(count, std::numeric_limits<double>::quiet_NaN());
    return torch::where(count > 0, total / count.clamp_min(1), nan);
}

// Intermediates of the depth-prior losses, retained for inspection dumps.
struct DepthPriorTerms {
    torch::Tensor mu;        // B (NaN where the mask is empty)
    torch::Tensor py;        // prediction-agreement map P*M + (1-P)*(1-M)
    torch::Tensor diff;      // (D - mu)^2
    torch::Tensor fp, fn;    // soft false-positive / false-negative maps
    torch::Tensor gx, gy;    // Sobel responses of D
    torch::Tensor weight_v;  // per-pixel stability integrand
    torch::Tensor weight_g;  // per-pixel continuity integrand
};

namespace detail {

inline torch::Tensor agreement_map(const torch::Tensor& p, const torch::Tensor& m) {
    return p * m + (1 - p) * (1 - m);
}

inline torch::Tensor neg_log(const torch::Tensor& py) {
    return -torch::log(py.clamp(kLogEps, 1.0));
}

inline std::pair<torch::Tensor, torch::Tensor> sobel(const torch::Tensor& d) {
    auto opts = torch::TensorOptions().dtype(d.dtype()).device(d.device());
    auto kx = torch::tensor({{-1.0, 0.0, 1.0}, {-2.0, 0.0, 2.0}, {-1.0, 0.0, 1.0}}, opts)
                  .view({1, 1, 3, 3});
    auto ky = kx.transpose(2, 3);
    auto padded = F::pad(d, F::PadFuncOptions({1, 1, 1, 1}).mode(torch::kReplicate));
    return {torch::conv2d(padded, kx), torch::conv2d(padded, ky)};
}

}  // namespace detail

// Stability term: -log(P_y) weighted by depth deviation from the masked mean,
// rewarding coverage of depth-coherent mask regions and penalizing false
// positives whose depth strays from it. Returns the per-sample losses plus
// every intermediate.
inline std::pair<torch::Tensor, DepthPriorTerms> depth_stability_core(const torch::Tensor& p,
                                                                     const torch::Tensor& m,
                                                                     const torch::Tensor& d) {
    require_finite(p, "prediction");
    require_finite(m, "mask");
    require_finite(d, "depth");
    if (p.sizes() != m.sizes() || p.sizes() != d.sizes()) {
        throw ShapeError("stability loss shape mismatch");
    }
    DepthPriorTerms t;
    auto count = detail::sample_sum(m);
    auto has_fg = (count > 0).to(p.dtype());
    auto mu_safe = detail::sample_sum(d * m) / count.clamp_min(1);
    auto nan = torch::full_like(count, std::numeric_limits<double>::quiet_NaN());
    t.mu = torch::where(count > 0, mu_safe, nan);
    t.py = detail::agreement_map(p, m);
    t.diff = (d - mu_safe.view({-1, 1, 1, 1})).pow(2);
    t.fp = (1 - t.py) * p;
    t.fn = (1 - t.py) * m;
    t.weight_v = detail::neg_log(t.py) * (t.diff * (t.fp - t.fn) + t.fn);
    auto grads = detail::sobel(d);
    t.gx = grads.first;
    t.gy = grads.second;
    t.weight_g = detail::neg_log(t.py) * (t.gx.abs() + t.gy.abs());
    auto lv = detail::sample_mean(t.weight_v) * has_fg;
    return {lv, std::move(t)};
}

inline torch::Tensor depth_stability_loss(const torch::Tensor& p, const torch::Tensor& m,
                                          const torch::Tensor& d) {
    return depth_stability_core(p, m, d).first.mean();
}

// Continuity term: -log(P_y) weighted by the depth gradient magnitude, so
// prediction errors concentrated on depth discontinuities cost the most.
inline torch::Tensor depth_continuity_core(const torch::Tensor& p, const torch::Tensor& m,
                                           const torch::Tensor& d) {
    require_finite(p, "prediction");
    require_finite(m, "mask");
    require_finite(d, "depth");
    if (p.sizes() != m.sizes() || p.sizes() != d.sizes()) {
        throw ShapeError("continuity loss shape mismatch");
    }
    auto grads = detail::sobel(d);
    auto weight = detail::neg_log(detail::agreement_map(p, m)) * (grads.first.abs() + grads.second.abs());
    return detail::sample_mean(weight);
}

inline torch::Tensor depth_continuity_loss(const torch::Tensor& p, const torch::Tensor& m,
                                           const torch::Tensor& d) {
    return depth_continuity_core(p, m, d).mean();
}

// Average of the stability and continuity terms.
inline std::pair<torch::Tensor, DepthPriorTerms> integrity_prior_core(const torch::Tensor& p,
                                                                     const torch::Tensor& m,
                                                                     const torch::Tensor& d) {
    auto [lv, terms] = depth_stability_core(p, m, d);
    auto lg = depth_continuity_core(p, m, d);
    return {(lv + lg) / 2, std::move(terms)};
}

inline std::pair<torch::Tensor, DepthPriorTerms> integrity_prior_loss(const torch::Tensor& p,
                                                                     const torch::Tensor& m,
                                                                     const torch::Tensor& d) {
    auto [core, terms] = integrity_prior_core(p, m, d);
    return {core.mean(), std::move(terms)};
}

// Border-emphasis weights shared by the weighted BCE and IoU: 1 at flat mask
// regions, up to 6 near label transitions. The 31x31 local mean excludes
// padding from its divisor so constant masks get weight exactly 1 everywhere.
inline torch::Tensor border_weight(const torch::Tensor& m) {
    auto local = F::avg_pool2d(m, F::AvgPool2dFuncOptions(31).stride(1).padding(15).count_include_pad(false));
    return 1 + 5 * (local - m).abs();
}

inline torch::Tensor weighted_bce_core(const torch::Tensor& logits, const torch::Tensor& m) {
    require_finite(logits, "logits");
    require_finite(m, "mask");
    if (logits.sizes() != m.sizes()) throw ShapeError("weighted BCE shape mismatch");
    auto w = border_weight(m);
    auto bce = F::binary_cross_entropy_with_logits(
        logits, m, F::BinaryCrossEntropyWithLogitsFuncOptions().reduction(torch::kNone));
    return detail::sample_sum(w * bce) / detail::sample_sum(w);
}

inline torch::Tensor weighted_bce(const torch::Tensor& logits, const torch::Tensor& m) {
    return weighted_bce_core(logits, m).mean();
}

inline torch::Tensor weighted_iou_core(const torch::Tensor& p, const torch::Tensor& m) {
    require_finite(p, "prediction");
    require_finite(m, "mask");
    if (p.sizes() != m.sizes()) throw ShapeError("weighted IoU shape mismatch");
    auto w = border_weight(m);
    auto inter = detail::sample_sum(w * p * m);
    auto uni = detail::sample_sum(w * (p + m - p * m));
    // Both-empty samples count as perfect (loss 0) rather than 0/0.
    auto iou = torch::where(uni > 0, inter / uni.clamp_min(detail::kDepthEps),
                            torch::ones_like(uni));
    return 1 - iou;
}

inline torch::Tensor weighted_iou(const torch::Tensor& p, const torch::Tensor& m) {
    return weighted_iou_core(p, m).mean();
}

namespace detail {

inline torch::Tensor gaussian_window(const torch::TensorOptions& opts) {
    constexpr int64_t size = 11;
    constexpr double sigma = 1.5;
    auto coords = torch::arange(size, opts) - (size - 1) / 2.0;
    auto g1 = torch::exp(-coords.pow(2) / (2 * sigma * sigma));
    g1 = g1 / g1.sum();
    return (g1.view({size, 1}) * g1.view({1, size})).view({1, 1, size, size});
}

}  // namespace detail

// 1 - SSIM with the standard 11x11 sigma-1.5 Gaussian window, computed at
// full output size with zero padding so it stays defined on small maps.
inline torch::Tensor ssim_core(const torch::Tensor& p, const torch::Tensor& m) {
    require_finite(p, "prediction");
    require_finite(m, "mask");
    if (p.sizes() != m.sizes()) throw ShapeError("SSIM shape mismatch");
    constexpr double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    auto window = detail::gaussian_window(p.options());
    auto blur = [&](const torch::Tensor& x) { return torch::conv2d(x, window, {}, 1, 5); };
    auto mu_p = blur(p), mu_m = blur(m);
    auto var_p = blur(p * p) - mu_p * mu_p;
    auto var_m = blur(m * m) - mu_m * mu_m;
    auto cov = blur(p * m) - mu_p * mu_m;
    auto ssim = ((2 * mu_p * mu_m + c1) * (2 * cov + c2)) /
                ((mu_p * mu_p + mu_m * mu_m + c1) * (var_p + var_m + c2));
    return 1 - detail::sample_mean(ssim);
}

inline torch::Tensor ssim_loss(const torch::Tensor& p, const torch::Tensor& m) {
    return ssim_core(p, m).mean();
}

// Scale-invariant logarithmic depth error with variance focus 0.85.
inline torch::Tensor silog_core(const torch::Tensor& d_pred, const torch::Tensor& d_target,
                                double lambda_silog = 0.85) {
    require_finite(d_pred, "depth prediction");
    require_finite(d_target, "depth target");
    if (d_pred.sizes() != d_target.sizes()) throw ShapeError("SILog shape mismatch");
    auto diff = torch::log(d_pred.clamp_min(detail::kDepthEps)) -
                torch::log(d_target.clamp_min(detail::kDepthEps));
    auto m2 = detail::sample_mean(diff.pow(2));
    auto m1 = detail::sample_mean(diff);
    return torch::sqrt((m2 - lambda_silog * m1.pow(2)).clamp_min(0));
}

inline torch::Tensor silog_loss(const torch::Tensor& d_pred, const torch::Tensor& d_target,
                                double lambda_silog = 0.85) {
    return silog_core(d_pred, d_target, lambda_silog).mean();
}

struct LossToggles {
    bool use_wbce = true;
    bool use_wiou = true;
    bool use_ssim = true;
    bool use_inte = true;
};

// Per-stage mask objective: wBCE + wIoU + SSIM/2 + integrity-prior, each term
// individually switchable.
inline torch::Tensor stage_loss_core(const torch::Tensor& logits, const torch::Tensor& m,
                                     const torch::Tensor& d, const LossToggles& t = {}) {
    auto p = torch::sigmoid(logits);
    auto total = torch::zeros({logits.size(0)}, logits.options());
    if (t.use_wbce) total = total + weighted_bce_core(logits, m);
    if (t.use_wiou) total = total + weighted_iou_core(p, m);
    if (t.use_ssim) total = total + ssim_core(p, m) / 2;
    if (t.use_inte) total = total + integrity_prior_core(p, m, d).first;
    return total;
}

inline torch::Tensor stage_loss(const torch::Tensor& logits, const torch::Tensor& m,
                                const torch::Tensor& d, const LossToggles& t = {}) {
    return stage_loss_core(logits, m, d, t).mean();
}

struct LossWeights {
    double lambda1 = 0.5;
    double lambda2 = 0.1;
    double lambda_silog = 0.85;
};

// Scalar components of one training step, all batch-averaged doubles.
struct LossReport {
    double wbce = 0, wiou = 0, ssim = 0, lv = 0, lg = 0, linte = 0;
    double final_f = 0;
    std::array<double, 5> stage_f{};      // deep-supervision mask losses, coarse to fine
    double final_silog = 0;
    std::array<double, 5> stage_silog{};  // deep-supervision depth losses
    double lambda1 = 0.5, lambda2 = 0.1;
    double total = 0;

    // The exact affine recombination the total is defined as.
    double recombine() const {
        double s = 0, ds = 0;
        for (double v : stage_f) s += v;
        for (double v : stage_silog) ds += v;
        return final_f + lambda1 * s + lambda2 * (final_silog + lambda1 * ds);
    }
};

struct TotalLoss {
    torch::Tensor value;  // differentiable scalar
    LossReport report;
};

// Per-sample values of the deep-supervised objective; the scalar the trainer
// optimizes is the mean of this vector. Exposed separately so tests can
// finite-difference many independent instances in one batched call.
inline torch::Tensor total_loss_samples(const PdfnetOutputs& out, const torch::Tensor& mask,
                                        const torch::Tensor& depth_target,
                                        const LossToggles& toggles = {},
                                        const LossWeights& weights = {}) {
    if (out.stage_logits.size() != 5 || out.stage_depths.size() != 5) {
        throw ShapeError("expected 5 deep-supervision outputs");
    }
    const bool train_depth = weights.lambda2 != 0.0;
    auto total = stage_loss_core(out.final_logit, mask, depth_target, toggles);
    if (train_depth) {
        total = total +
                weights.lambda2 * silog_core(out.final_depth, depth_target, weights.lambda_silog);
    }
    for (int i = 0; i < 5; ++i) {
        const auto h = out.stage_logits[i].size(2), w = out.stage_logits[i].size(3);
        auto m_i = F::adaptive_avg_pool2d(mask, F::AdaptiveAvgPool2dFuncOptions({h, w}))
                       .ge(0.5)
                       .to(mask.dtype());
        auto d_i = F::adaptive_avg_pool2d(depth_target, F::AdaptiveAvgPool2dFuncOptions({h, w}));
        total = total + weights.lambda1 * stage_loss_core(out.stage_logits[i], m_i, d_i, toggles);
        if (train_depth) {
            total = total + weights.lambda2 * weights.lambda1 *
                                silog_core(out.stage_depths[i], d_i, weights.lambda_silog);
        }
    }
    return total;
}

// Deep-supervised objective over the 5 stage outputs plus the full-resolution
// ones: stage targets are area-downsampled (masks re-binarized at 0.5).
inline TotalLoss total_loss(const PdfnetOutputs& out, const torch::Tensor& mask,
                            const torch::Tensor& depth_target, const LossToggles& toggles = {},
                            const LossWeights& weights = {}) {
    if (out.stage_logits.size() != 5 || out.stage_depths.size() != 5) {
        throw ShapeError("expected 5 deep-supervision outputs");
    }
    TotalLoss r;
    r.report.lambda1 = weights.lambda1;
    r.report.lambda2 = weights.lambda2;

    // With a zero depth weight the depth terms are excluded from the graph
    // entirely (not just scaled to zero), so depth-head parameters keep
    // undefined gradients and optimizers with decoupled weight decay leave
    // them untouched. Their values are still reported.
    const bool train_depth = weights.lambda2 != 0.0;
    auto silog_at = [&](const torch::Tensor& d_pred, const torch::Tensor& d_tgt) {
        if (train_depth) return silog_core(d_pred, d_tgt, weights.lambda_silog);
        torch::NoGradGuard ng;
        return silog_core(d_pred, d_tgt, weights.lambda_silog);
    };

    auto final_core = stage_loss_core(out.final_logit, mask, depth_target, toggles);
    auto silog_final_core = silog_at(out.final_depth, depth_target);
    auto total_core = final_core;
    if (train_depth) total_core = total_core + weights.lambda2 * silog_final_core;
    for (int i = 0; i < 5; ++i) {
        const auto h = out.stage_logits[i].size(2), w = out.stage_logits[i].size(3);
        auto m_i = F::adaptive_avg_pool2d(mask, F::AdaptiveAvgPool2dFuncOptions({h, w}))
                       .ge(0.5)
                       .to(mask.dtype());
        auto d_i = F::adaptive_avg_pool2d(depth_target, F::AdaptiveAvgPool2dFuncOptions({h, w}));
        auto stage_core = stage_loss_core(out.stage_logits[i], m_i, d_i, toggles);
        auto stage_silog = silog_at(out.stage_depths[i], d_i);
        total_core = total_core + weights.lambda1 * stage_core;
        if (train_depth) {
            total_core = total_core + weights.lambda2 * weights.lambda1 * stage_silog;
        }
        r.report.stage_f[i] = stage_core.mean().item<double>();
        r.report.stage_silog[i] = stage_silog.mean().item<double>();
    }
    r.value = total_core.mean();
    r.report.final_f = final_core.mean().item<double>();
    r.report.final_silog = silog_final_core.mean().item<double>();

    {
        torch::NoGradGuard ng;
        auto p = torch::sigmoid(out.final_logit);
        r.report.wbce = weighted_bce(out.final_logit, mask).item<double>();
        r.report.wiou = weighted_iou(p, mask).item<double>();
        r.report.ssim = ssim_loss(p, mask).item<double>();
        auto [lv, terms] = depth_stability_core(p, mask, depth_target);
        r.report.lv = lv.mean().item<double>();
        r.report.lg = depth_continuity_loss(p, mask, depth_target).item<double>();
        r.report.linte = (r.report.lv + r.report.lg) / 2;
    }
    r.report.total = r.report.recombine();
    return r;
}

}  // namespace pdfnet
