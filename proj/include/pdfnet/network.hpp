#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "pdfnet/backbone.hpp"
#include "pdfnet/errors.hpp"
#include "pdfnet/fusion.hpp"
#include "pdfnet/layers.hpp"
#include "pdfnet/patchify.hpp"

namespace pdfnet {

struct NetworkConfig {
    int64_t grid = 8;             // patch grid g (g*g patch views)
    double tau = 0.1;             // boundary threshold
    int64_t token_res = 32;       // token extent cap inside fusion stages
    int64_t head_count = 4;
    int64_t ffn_ratio = 2;
    int64_t decoder_channels = 64;
    BackboneConfig backbone;
    std::array<int64_t, 4> patch_depths{1, 1, 2, 1};  // patch-encoder block depths
    bool share_patch_encoder = false;
    // Depth-branch gates: 1 = full model, 0 = severs every depth contribution
    // to the mask path (visual-only ablation).
    double gate_context = 1.0;
    double gate_fusion = 1.0;
    double gate_merge = 1.0;
    bool shallow_fusion = true;   // stem/stage-1 skips in the final merge
    bool retain_fusion = false;   // keep per-stage fusion intermediates

    // Stage-5 runs at 1/64 scale and patches need 32*g divisibility; both
    // must hold for the five-stage decode schedule.
    int64_t required_divisor() const { return std::max<int64_t>(64, 32 * grid); }

    void validate() const {
        if (grid != 1 && grid != 2 && grid != 4 && grid != 8 && grid != 16) {
            throw ConfigError("patch grid must be one of 1,2,4,8,16");
        }
        if (decoder_channels < 4) throw ConfigError("decoder channels too small");
        backbone.validate();
    }
};

struct PdfnetOutputs {
    // Index 0 is the deepest stage (1/64), index 4 the finest (1/4).
    std::vector<torch::Tensor> stage_logits, stage_predictions;
    std::vector<torch::Tensor> stage_depth_logits, stage_depths;
    torch::Tensor final_logit, final_prediction;
    torch::Tensor final_depth_logit, final_depth;
    std::vector<FusedStageFeatures> fusion;  // filled when retain_fusion is set
};

// Projects the four stage maps to a common width, pools them to 1/64 scale,
// and mixes the sum: the cross-scale deepest-stage constructor, shared by the
// visual, depth, and patch branches.
struct Stage5FuserImpl : torch::nn::Module {
    torch::nn::ModuleList projections;
    ConvBlock mix1{nullptr}, mix2{nullptr};

    Stage5FuserImpl(const std::array<int64_t, 4>& ch, int64_t out_ch) {
        projections = register_module("projections", torch::nn::ModuleList());
        for (int i = 0; i < 4; ++i) {
            projections->push_back(torch::nn::Conv2d(
                torch::nn::Conv2dOptions(ch[i], out_ch, 1).bias(false)));
        }
        mix1 = register_module("mix1", ConvBlock(out_ch, out_ch));
        mix2 = register_module("mix2", ConvBlock(out_ch, out_ch));
    }

    torch::Tensor forward(const std::array<torch::Tensor, 4>& stages) {
        namespace F = torch::nn::functional;
        const int64_t th = stages[3].size(2) / 2, tw = stages[3].size(3) / 2;
        if (th < 1 || tw < 1) {
            throw ShapeError("input too small for the 1/64 fusion stage");
        }
        torch::Tensor sum;
        for (int i = 0; i < 4; ++i) {
            auto proj = projections[i]->as<torch::nn::Conv2d>()->forward(stages[i]);
            auto pooled = F::adaptive_avg_pool2d(proj, F::AdaptiveAvgPool2dFuncOptions({th, tw}));
            sum = sum.defined() ? sum + pooled : pooled;
        }
        return mix2(mix1(sum));
    }
};
TORCH_MODULE(Stage5Fuser);

// Two conv3x3 -> RMS-norm -> SiLU blocks: the depth-refinement stage body.
struct DepthBlockImpl : torch::nn::Module {
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    RMSNorm2d norm1{nullptr}, norm2{nullptr};

    DepthBlockImpl(int64_t in_ch, int64_t out_ch) {
        conv1 = register_module("conv1", torch::nn::Conv2d(
            torch::nn::Conv2dOptions(in_ch, out_ch, 3).padding(1).bias(false)));
        conv2 = register_module("conv2", torch::nn::Conv2d(
            torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1).bias(false)));
        norm1 = register_module("norm1", RMSNorm2d(out_ch));
        norm2 = register_module("norm2", RMSNorm2d(out_ch));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        return torch::silu(norm2(conv2(torch::silu(norm1(conv1(x))))));
    }
};
TORCH_MODULE(DepthBlock);

struct PdfnetImpl : torch::nn::Module {
    NetworkConfig cfg;
    std::array<int64_t, 4> ch{};
    std::array<int64_t, 5> stage_ch{};  // coarse (1/64) to fine (1/4)

    Backbone trunk{nullptr};
    Backbone patch_trunk{nullptr};  // null when share_patch_encoder
    Stage5Fuser fuser{nullptr};
    std::vector<FusionStage> fse;
    std::vector<ConvBlock> merge, refine;
    std::vector<torch::nn::Conv2d> head;
    std::vector<torch::nn::Conv2d> depth_proj;
    std::vector<DepthBlock> depth_block;
    std::vector<torch::nn::Conv2d> depth_head;
    torch::nn::Conv2d fuse_stage1{nullptr}, fuse_stem{nullptr};
    ConvBlock final_block{nullptr};
    torch::nn::Conv2d final_head{nullptr};
    torch::nn::Conv2d dfuse_stage1{nullptr}, dfuse_stem{nullptr};
    ConvBlock dfinal_block{nullptr};
    torch::nn::Conv2d dfinal_head{nullptr};

    explicit PdfnetImpl(NetworkConfig c) : cfg(c) {
        cfg.validate();
        ch = cfg.backbone.scaled_channels();
        stage_ch = {ch[3], ch[3], ch[2], ch[1], ch[0]};
        trunk = register_module("trunk", Backbone(cfg.backbone, /*depth_stem=*/true));
        if (!cfg.share_patch_encoder) {
            BackboneConfig pc = cfg.backbone;
            pc.block_depths = cfg.patch_depths;
            patch_trunk = register_module("patch_trunk", Backbone(pc, /*depth_stem=*/false));
        }
        fuser = register_module("fuser", Stage5Fuser(ch, ch[3]));

        const int64_t d = cfg.decoder_channels;
        for (int i = 0; i < 5; ++i) {
            FusionStageOptions fo;
            fo.channels = stage_ch[i];
            fo.grid = cfg.grid;
            fo.tau = cfg.tau;
            fo.token_res = cfg.token_res;
            fo.head_count = cfg.head_count;
            fo.ffn_ratio = cfg.ffn_ratio;
            fo.gate_context = cfg.gate_context;
            fo.gate_fusion = cfg.gate_fusion;
            fse.push_back(register_module("fse" + std::to_string(i), FusionStage(fo)));
            merge.push_back(register_module("merge" + std::to_string(i),
                                            ConvBlock(stage_ch[i], d)));
            refine.push_back(register_module("refine" + std::to_string(i), ConvBlock(d, d)));
            head.push_back(register_module(
                "head" + std::to_string(i),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(d, 1, 3).padding(1))));
            depth_proj.push_back(register_module(
                "depth_proj" + std::to_string(i),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(stage_ch[i], d, 1).bias(false))));
            depth_block.push_back(
                register_module("depth_block" + std::to_string(i), DepthBlock(d, d)));
            depth_head.push_back(register_module(
                "depth_head" + std::to_string(i),
                torch::nn::Conv2d(torch::nn::Conv2dOptions(d, 1, 3).padding(1))));
        }
        auto proj1 = [&](int64_t in) {
            return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, d, 1).bias(false));
        };
        fuse_stage1 = register_module("fuse_stage1", proj1(ch[0]));
        fuse_stem = register_module("fuse_stem", proj1(cfg.backbone.scaled_stem()));
        final_block = register_module("final_block", ConvBlock(d, d));
        final_head = register_module(
            "final_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, 1, 3).padding(1)));
        dfuse_stage1 = register_module("dfuse_stage1", proj1(ch[0]));
        dfuse_stem = register_module("dfuse_stem", proj1(cfg.backbone.scaled_stem()));
        dfinal_block = register_module("dfinal_block", ConvBlock(d, d));
        dfinal_head = register_module(
            "dfinal_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(d, 1, 3).padding(1)));
    }

    // True for parameters that belong to the depth-refinement head (the
    // depth decoder and its full-resolution output path). Only these may
    // stay frozen when the depth objective is disabled.
    static bool is_depth_head_param(const std::string& name) {
        return name.rfind("depth_", 0) == 0 || name.rfind("dfuse_", 0) == 0 ||
               name.rfind("dfinal_", 0) == 0;
    }

    // Five-level feature stacks, coarse (1/64) to fine (1/4), per branch.
    struct EncodedPyramids {
        std::array<torch::Tensor, 5> visual, depth, patch;
        torch::Tensor stem_visual_half, stem_depth_half;
        torch::Tensor stage1_visual, stage1_depth;
    };

    EncodedPyramids encode(const torch::Tensor& image, const torch::Tensor& depth) {
        const int64_t div = cfg.required_divisor();
        if (image.size(2) % div != 0 || image.size(3) % div != 0) {
            throw ShapeError("input size must be divisible by " + std::to_string(div));
        }
        if (image.size(2) != depth.size(2) || image.size(3) != depth.size(3) ||
            image.size(0) != depth.size(0)) {
            throw ShapeError("image/depth shape mismatch");
        }
        auto vis = trunk->forward_visual(image);
        auto dep = trunk->forward_depth(depth);

        auto grid = partition_patches(image, cfg.grid);
        const auto b = image.size(0);
        auto patch_batch = grid.patches.reshape({cfg.grid * cfg.grid * b, 3,
                                                 image.size(2) / cfg.grid,
                                                 image.size(3) / cfg.grid});
        auto penc =
            (cfg.share_patch_encoder ? trunk : patch_trunk)->forward_visual(patch_batch);
        std::array<torch::Tensor, 4> patch_stages;
        for (int i = 0; i < 4; ++i) {
            patch_stages[i] = reassemble_patch_batch(penc.stages[i], cfg.grid, b);
        }

        EncodedPyramids e;
        e.stem_visual_half = vis.half;
        e.stem_depth_half = dep.half;
        e.stage1_visual = vis.stages[0];
        e.stage1_depth = dep.stages[0];
        e.visual = {fuser(vis.stages), vis.stages[3], vis.stages[2], vis.stages[1], vis.stages[0]};
        e.depth = {fuser(dep.stages), dep.stages[3], dep.stages[2], dep.stages[1], dep.stages[0]};
        e.patch = {fuser(patch_stages), patch_stages[3], patch_stages[2], patch_stages[1],
                   patch_stages[0]};
        return e;
    }

    PdfnetOutputs forward(const torch::Tensor& image, const torch::Tensor& depth) {
        auto enc = encode(image, depth);
        PdfnetOutputs out;
        torch::Tensor prev_pred, state, dstate;
        for (int i = 0; i < 5; ++i) {
            auto fused = fse[i](enc.visual[i], enc.depth[i], enc.patch[i], prev_pred);
            auto merged = merge[i](fused.visual + fused.patch + cfg.gate_merge * fused.depth);
            state = state.defined() ? merged + upsample2d(state, 2) : merged;
            state = refine[i](state);
            auto logit = head[i](state);
            auto pred = torch::sigmoid(logit);
            out.stage_logits.push_back(logit);
            out.stage_predictions.push_back(pred);
            prev_pred = pred;

            auto z = depth_proj[i](enc.visual[i] + enc.depth[i]) + state;
            auto dcur = depth_block[i](z);
            dstate = dstate.defined() ? dcur + upsample2d(dstate, 2) : dcur;
            auto dlogit = depth_head[i](dstate);
            out.stage_depth_logits.push_back(dlogit);
            out.stage_depths.push_back(torch::sigmoid(dlogit));
            if (cfg.retain_fusion) out.fusion.push_back(std::move(fused));
        }

        auto m = state;
        if (cfg.shallow_fusion) m = m + fuse_stage1(enc.stage1_visual);
        m = upsample2d(m, 2);
        if (cfg.shallow_fusion) m = m + fuse_stem(enc.stem_visual_half);
        m = final_block(upsample2d(m, 2));
        out.final_logit = final_head(m);
        out.final_prediction = torch::sigmoid(out.final_logit);

        auto dm = dstate;
        if (cfg.shallow_fusion) {
            dm = dm + dfuse_stage1(enc.stage1_visual + enc.stage1_depth);
        }
        dm = upsample2d(dm, 2);
        if (cfg.shallow_fusion) {
            dm = dm + dfuse_stem(enc.stem_visual_half + enc.stem_depth_half);
        }
        dm = dfinal_block(upsample2d(dm, 2));
        out.final_depth_logit = dfinal_head(dm);
        out.final_depth = torch::sigmoid(out.final_depth_logit);
        return out;
    }
};
TORCH_MODULE(Pdfnet);

}  // namespace pdfnet
