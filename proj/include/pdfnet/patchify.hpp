#pragma once

#include <torch/torch.h>

#include <utility>

#include "pdfnet/errors.hpp"

namespace pdfnet {

// Non-overlapping g x g tiling of a BxCxHxW tensor, stored patch-major so a
// whole grid can run through an encoder as one batch.
struct PatchGrid {
    torch::Tensor patches;  // (g*g) x B x C x (H/g) x (W/g), row-major patch order
    int64_t grid_size = 1;
    std::pair<int64_t, int64_t> origin_shape;  // (H, W)
};

inline PatchGrid partition_patches(const torch::Tensor& x, int64_t g) {
    if (x.dim() != 4) {
        throw ShapeError("partition_patches: expected BxCxHxW, got dim " + std::to_string(x.dim()));
    }
    const int64_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (g < 1 || h % g != 0 || w % g != 0) {
        throw ShapeError("partition_patches: " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by grid " + std::to_string(g));
    }
    const int64_t ph = h / g, pw = w / g;
    // B x C x g x ph x g x pw -> (gr, gc, B, C, ph, pw) -> (g*g) x B x C x ph x pw
    auto p = x.view({b, c, g, ph, g, pw})
                 .permute({2, 4, 0, 1, 3, 5})
                 .contiguous()
                 .view({g * g, b, c, ph, pw});
    return PatchGrid{p, g, {h, w}};
}

inline torch::Tensor reassemble_patches(const PatchGrid& grid) {
    const auto& p = grid.patches;
    if (p.dim() != 5) {
        throw ShapeError("reassemble_patches: expected (g*g)xBxCxhxw patches");
    }
    const int64_t g = grid.grid_size;
    if (p.size(0) != g * g) {
        throw ShapeError("reassemble_patches: patch count " + std::to_string(p.size(0)) +
                         " != grid_size^2 = " + std::to_string(g * g));
    }
    const int64_t b = p.size(1), c = p.size(2), ph = p.size(3), pw = p.size(4);
    return p.view({g, g, b, c, ph, pw})
        .permute({2, 3, 0, 4, 1, 5})
        .contiguous()
        .view({b, c, g * ph, g * pw});
}

// Reassembles a patch-major batch (as produced by running grid.patches through
// an encoder) back into full maps. feats is (g*g*B) x C x h x w.
inline torch::Tensor reassemble_patch_batch(const torch::Tensor& feats, int64_t g, int64_t batch) {
    if (feats.dim() != 4 || feats.size(0) != g * g * batch) {
        throw ShapeError("reassemble_patch_batch: leading dim must be g*g*B");
    }
    PatchGrid grid;
    grid.patches = feats.view({g * g, batch, feats.size(1), feats.size(2), feats.size(3)});
    grid.grid_size = g;
    grid.origin_shape = {g * feats.size(2), g * feats.size(3)};
    return reassemble_patches(grid);
}

}  // namespace pdfnet
