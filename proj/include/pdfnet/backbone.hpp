#pragma once

#include <torch/torch.h>

#include <array>
#include <cmath>
#include <cstdint>

#include "pdfnet/errors.hpp"
#include "pdfnet/layers.hpp"

namespace pdfnet {

// Four-stage residual pyramid with the Swin-family stage contract: feature
// strides 4, 8, 16, 32. Widths and depths are configurable; width_scale
// rescales every channel count for desk-size runs.
struct BackboneConfig {
    std::array<int64_t, 4> stage_channels{128, 256, 512, 1024};
    std::array<int64_t, 4> block_depths{2, 2, 6, 2};
    int64_t stem_channels = 32;
    double width_scale = 1.0;

    int64_t scaled(int64_t raw) const {
        return std::max<int64_t>(2, std::llround(raw * width_scale));
    }
    std::array<int64_t, 4> scaled_channels() const {
        std::array<int64_t, 4> out{};
        for (int i = 0; i < 4; ++i) out[i] = scaled(stage_channels[i]);
        return out;
    }
    int64_t scaled_stem() const { return std::max<int64_t>(2, scaled(stem_channels)); }

    void validate() const {
        auto ch = scaled_channels();
        for (int i = 0; i < 4; ++i) {
            if (ch[i] <= 0) throw ConfigError("backbone channels must be positive");
            if (i > 0 && ch[i] < ch[i - 1]) {
                throw ConfigError("backbone channels must be non-decreasing");
            }
            if (block_depths[i] < 1) throw ConfigError("backbone depths must be >= 1");
        }
    }
};

// One modality's feature stack: the 1/2-resolution stem tap plus the four
// stage outputs at strides 4/8/16/32.
struct PyramidFeatures {
    torch::Tensor half;
    std::array<torch::Tensor, 4> stages;
};

struct BackboneImpl : torch::nn::Module {
    BackboneConfig cfg;
    std::array<int64_t, 4> ch{};
    int64_t stem_ch = 0;
    bool with_depth_stem = false;

    ConvBlock stem_rgb_a{nullptr}, stem_rgb_b{nullptr};
    ConvBlock stem_depth_a{nullptr}, stem_depth_b{nullptr};
    torch::nn::Sequential stage1{nullptr}, stage2{nullptr}, stage3{nullptr}, stage4{nullptr};

    explicit BackboneImpl(BackboneConfig c, bool depth_stem = false)
        : cfg(c), with_depth_stem(depth_stem) {
        cfg.validate();
        ch = cfg.scaled_channels();
        stem_ch = cfg.scaled_stem();
        stem_rgb_a = register_module("stem_rgb_a", ConvBlock(3, stem_ch, 3, 2));
        stem_rgb_b = register_module("stem_rgb_b", ConvBlock(stem_ch, ch[0], 3, 2));
        if (with_depth_stem) {
            stem_depth_a = register_module("stem_depth_a", ConvBlock(1, stem_ch, 3, 2));
            stem_depth_b = register_module("stem_depth_b", ConvBlock(stem_ch, ch[0], 3, 2));
        }
        auto make_stage = [&](int idx, int64_t in_ch, int64_t out_ch, int64_t stride) {
            torch::nn::Sequential s;
            s->push_back(ResidualBlock(in_ch, out_ch, stride));
            for (int64_t d = 1; d < cfg.block_depths[idx]; ++d) {
                s->push_back(ResidualBlock(out_ch, out_ch, 1));
            }
            return s;
        };
        stage1 = register_module("stage1", make_stage(0, ch[0], ch[0], 1));
        stage2 = register_module("stage2", make_stage(1, ch[0], ch[1], 2));
        stage3 = register_module("stage3", make_stage(2, ch[1], ch[2], 2));
        stage4 = register_module("stage4", make_stage(3, ch[2], ch[3], 2));
    }

    PyramidFeatures run_trunk(const torch::Tensor& half, const torch::Tensor& quarter) {
        PyramidFeatures f;
        f.half = half;
        f.stages[0] = stage1->forward(quarter);
        f.stages[1] = stage2->forward(f.stages[0]);
        f.stages[2] = stage3->forward(f.stages[1]);
        f.stages[3] = stage4->forward(f.stages[2]);
        return f;
    }

    PyramidFeatures forward_visual(const torch::Tensor& image) {
        if (image.dim() != 4 || image.size(1) != 3) {
            throw ShapeError("visual branch expects Bx3xHxW");
        }
        auto half = stem_rgb_a(image);
        return run_trunk(half, stem_rgb_b(half));
    }

    PyramidFeatures forward_depth(const torch::Tensor& depth) {
        if (!with_depth_stem) {
            throw ShapeError("backbone built without a depth stem");
        }
        if (depth.dim() != 4 || depth.size(1) != 1) {
            throw ShapeError("depth branch expects Bx1xHxW");
        }
        auto half = stem_depth_a(depth);
        return run_trunk(half, stem_depth_b(half));
    }
};
TORCH_MODULE(Backbone);

}  // namespace pdfnet
