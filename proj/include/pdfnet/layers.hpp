#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "pdfnet/errors.hpp"

namespace pdfnet {

// Largest channel-divisor group count that is <= 8 while keeping at least two
// channels per group; falls back to a single group for very narrow tensors.
inline int64_t norm_group_count(int64_t channels) {
    for (int64_t g = 8; g >= 2; --g) {
        if (channels % g == 0 && channels / g >= 2) return g;
    }
    return 1;
}

// Root-mean-square normalization over the channel axis of a BxCxHxW map.
struct RMSNorm2dImpl : torch::nn::Module {
    torch::Tensor weight;
    double eps;

    explicit RMSNorm2dImpl(int64_t channels, double eps = 1e-6) : eps(eps) {
        weight = register_parameter("weight", torch::ones({channels}));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto ms = x.pow(2).mean(1, /*keepdim=*/true);
        return x * torch::rsqrt(ms + eps) * weight.view({1, -1, 1, 1});
    }
};
TORCH_MODULE(RMSNorm2d);

// Root-mean-square normalization over the trailing feature axis of a BxTxC
// token sequence.
struct RMSNormSeqImpl : torch::nn::Module {
    torch::Tensor weight;
    double eps;

    explicit RMSNormSeqImpl(int64_t dim, double eps = 1e-6) : eps(eps) {
        weight = register_parameter("weight", torch::ones({dim}));
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto ms = x.pow(2).mean(-1, /*keepdim=*/true);
        return x * torch::rsqrt(ms + eps) * weight;
    }
};
TORCH_MODULE(RMSNormSeq);

// conv3x3 -> GroupNorm -> SiLU. The convolution carries no bias because the
// following normalization would cancel a constant channel offset anyway.
struct ConvBlockImpl : torch::nn::Module {
    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};

    ConvBlockImpl(int64_t in_ch, int64_t out_ch, int64_t kernel = 3, int64_t stride = 1) {
        conv = register_module(
            "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, kernel)
                                          .stride(stride)
                                          .padding(kernel / 2)
                                          .bias(false)));
        norm = register_module("norm",
                               torch::nn::GroupNorm(torch::nn::GroupNormOptions(
                                   norm_group_count(out_ch), out_ch)));
    }

    torch::Tensor forward(const torch::Tensor& x) { return torch::silu(norm(conv(x))); }
};
TORCH_MODULE(ConvBlock);

// Two ConvBlocks with an identity (or 1x1-projected) skip connection.
struct ResidualBlockImpl : torch::nn::Module {
    ConvBlock block1{nullptr}, block2{nullptr};
    torch::nn::Conv2d skip{nullptr};
    bool project = false;

    ResidualBlockImpl(int64_t in_ch, int64_t out_ch, int64_t stride = 1) {
        block1 = register_module("block1", ConvBlock(in_ch, out_ch, 3, stride));
        block2 = register_module("block2", ConvBlock(out_ch, out_ch, 3, 1));
        project = (in_ch != out_ch) || (stride != 1);
        if (project) {
            skip = register_module(
                "skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1)
                                              .stride(stride)
                                              .bias(false)));
        }
    }

    torch::Tensor forward(const torch::Tensor& x) {
        auto y = block2(block1(x));
        return y + (project ? skip(x) : x);
    }
};
TORCH_MODULE(ResidualBlock);

// Bilinear upsample by an integer factor (align_corners=false).
inline torch::Tensor upsample2d(const torch::Tensor& x, int64_t factor) {
    if (factor == 1) return x;
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{static_cast<double>(factor),
                                                                   static_cast<double>(factor)})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

// Bilinear resize to an explicit spatial size.
inline torch::Tensor resize_to(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

}  // namespace pdfnet
