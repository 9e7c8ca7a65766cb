#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "pdfnet/boundary.hpp"
#include "pdfnet/cross_attention.hpp"
#include "pdfnet/errors.hpp"
#include "pdfnet/layers.hpp"

namespace pdfnet {

struct FusionStageOptions {
    int64_t channels = 0;
    int64_t grid = 8;            // patch grid g
    double tau = 0.1;
    int64_t token_res = 32;      // target token extent per spatial axis
    int64_t head_count = 4;
    int64_t ffn_ratio = 2;
    double gate_context = 1.0;   // scales depth tokens in the visual-depth context
    double gate_fusion = 1.0;    // scales the fused depth tokens fed to the last attention
};

// Per-stage fusion result; the updated features plus every intermediate the
// inspection tooling and tests want to see.
struct FusedStageFeatures {
    torch::Tensor visual, depth, patch;        // updated stage features (input shapes)
    BoundaryArtifacts artifacts;
    torch::Tensor fp_visual, fp_depth, fp_patch;  // pooled token sequences B x L x C
    torch::Tensor fn_patch, fn_depth, fn_visual1, fn_visual2;
};

// Largest token extent <= max(token_res, g) that divides the stage extent and
// is a multiple of g, so every token lies inside exactly one patch.
inline int64_t token_extent(int64_t extent, int64_t g, int64_t token_res) {
    const int64_t cap = std::max(token_res, g);
    if (extent <= cap) return extent;
    for (int64_t t = cap; t >= g; --t) {
        if (extent % t == 0 && t % g == 0) return t;
    }
    throw ShapeError("no patch-aligned token extent for stage size " + std::to_string(extent));
}

// Feature selection and extraction for one decoder stage: boundary-integrity
// separation of the previous prediction steers two token-space attentions
// (patch and depth), whose results are folded back into the full-resolution
// visual stream, with residual deltas keeping the whole map an identity at
// zero initialization.
struct FusionStageImpl : torch::nn::Module {
    FusionStageOptions opts;
    CrossAttentionBlock coa_patch{nullptr}, coa_depth{nullptr}, coa_visual1{nullptr},
        coa_visual2{nullptr};

    explicit FusionStageImpl(FusionStageOptions o) : opts(o) {
        auto block = [&] {
            CrossAttentionOptions c;
            c.query_dim = opts.channels;
            c.context_dim = opts.channels;
            c.head_count = opts.head_count;
            c.ffn_ratio = opts.ffn_ratio;
            return CrossAttentionBlock(c);
        };
        coa_patch = register_module("coa_patch", block());
        coa_depth = register_module("coa_depth", block());
        coa_visual1 = register_module("coa_visual1", block());
        coa_visual2 = register_module("coa_visual2", block());
    }

    static torch::Tensor to_tokens(const torch::Tensor& x, int64_t th, int64_t tw) {
        namespace F = torch::nn::functional;
        auto pooled = (x.size(2) == th && x.size(3) == tw)
                          ? x
                          : F::adaptive_avg_pool2d(x, F::AdaptiveAvgPool2dFuncOptions({th, tw}));
        return pooled.flatten(2).transpose(1, 2);  // B x (th*tw) x C
    }

    static torch::Tensor to_map(const torch::Tensor& tokens, int64_t th, int64_t tw) {
        return tokens.transpose(1, 2).contiguous().view({tokens.size(0), tokens.size(2), th, tw});
    }

    // prev_pred may be undefined (deepest stage): the neutral bootstrap is
    // used, as it is for stages too small for the 1/8-kernel pooling.
    FusedStageFeatures forward(const torch::Tensor& f_visual, const torch::Tensor& f_depth,
                               const torch::Tensor& f_patch, const torch::Tensor& prev_pred) {
        namespace F = torch::nn::functional;
        if (f_visual.sizes() != f_depth.sizes() || f_visual.sizes() != f_patch.sizes()) {
            throw ShapeError("fusion stage branches disagree in shape");
        }
        const auto b = f_visual.size(0), h = f_visual.size(2), w = f_visual.size(3);
        const auto g = opts.grid;

        // Stages that cannot be decomposed (no previous prediction, too
        // small for the 1/8 pooling kernel, or not divisible into the patch
        // grid) run with the neutral bootstrap instead.
        FusedStageFeatures out;
        const bool decomposable =
            prev_pred.defined() && h >= 8 && w >= 8 && h % g == 0 && w % g == 0;
        if (decomposable) {
            out.artifacts = separate_boundary(resize_to(prev_pred, h, w), g, opts.tau);
        } else {
            out.artifacts = bootstrap_boundary(b, h, w, g, opts.tau, f_visual.options());
        }

        const int64_t th = token_extent(h, g, opts.token_res);
        const int64_t tw = token_extent(w, g, opts.token_res);
        out.fp_visual = to_tokens(f_visual, th, tw);
        out.fp_depth = to_tokens(f_depth, th, tw);
        out.fp_patch = to_tokens(f_patch, th, tw);

        auto s_tokens = to_tokens(out.artifacts.integrity, th, tw);  // B x L x 1
        // Block-replicates the per-patch boundary indicator onto the token
        // grid (exact replication when the patch grid divides the token
        // extent; max over covered patches when the token grid is coarser).
        auto bd_map = F::adaptive_max_pool2d(out.artifacts.patch_scores.view({b, 1, g, g}),
                                             F::AdaptiveMaxPool2dFuncOptions({th, tw}));
        auto bd_tokens = bd_map.flatten(2).transpose(1, 2);  // B x L x 1

        auto q_patch = out.fp_patch * (1.0 + bd_tokens);
        auto q_depth = out.fp_depth * (1.0 + s_tokens);
        auto ctx_vd = torch::cat({out.fp_visual, opts.gate_context * out.fp_depth}, 1);
        auto ctx_vp = torch::cat({out.fp_visual, out.fp_patch}, 1);

        out.fn_patch = coa_patch(q_patch, ctx_vd);
        out.fn_depth = coa_depth(q_depth, ctx_vp);

        auto q_visual = f_visual.flatten(2).transpose(1, 2);  // full resolution tokens
        out.fn_visual1 = coa_visual1(q_visual, out.fn_patch);
        out.fn_visual2 = coa_visual2(out.fn_visual1, opts.gate_fusion * out.fn_depth);

        out.visual = f_visual + to_map(out.fn_visual2 - q_visual, h, w);
        out.patch = f_patch + resize_to(to_map(out.fn_patch - q_patch, th, tw), h, w);
        out.depth = f_depth + resize_to(to_map(out.fn_depth - q_depth, th, tw), h, w);
        return out;
    }
};
TORCH_MODULE(FusionStage);

}  // namespace pdfnet
