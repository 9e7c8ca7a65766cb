#pragma once

#include <torch/torch.h>

#include <cstdint>

#include "pdfnet/errors.hpp"
#include "pdfnet/patchify.hpp"

namespace pdfnet {

// Boundary-integrity decomposition of a previous-stage prediction: a local
// average (pool), a thresholded disagreement band (boundary), the suppressed
// interior (integrity), and per-patch boundary occupancy scores.
struct BoundaryArtifacts {
    torch::Tensor prev_prediction;  // B x 1 x h x w in [0,1]
    torch::Tensor pooled;           // B x 1 x h x w
    torch::Tensor boundary;         // B x 1 x h x w in {0,1}
    torch::Tensor integrity;        // B x 1 x h x w in [0,1]
    torch::Tensor patch_scores;     // B x g^2 in {0,1}
    double tau = 0.1;
};

// Local mean of the prediction with an h/8 x w/8 kernel, stride 1, and
// edge-replicating padding so the output keeps the input's spatial size.
inline torch::Tensor pool_prediction(const torch::Tensor& p) {
    namespace F = torch::nn::functional;
    if (p.dim() != 4 || p.size(1) != 1) {
        throw ShapeError("pool_prediction expects Bx1xhxw");
    }
    const int64_t h = p.size(2), w = p.size(3);
    if (h < 8 || w < 8) {
        throw ShapeError("pool_prediction needs spatial size >= 8");
    }
    const int64_t kh = h / 8, kw = w / 8;
    const int64_t top = (kh - 1) / 2, bottom = kh - 1 - top;
    const int64_t left = (kw - 1) / 2, right = kw - 1 - left;
    auto padded = F::pad(p, F::PadFuncOptions({left, right, top, bottom}).mode(torch::kReplicate));
    return F::avg_pool2d(padded, F::AvgPool2dFuncOptions({kh, kw}).stride(1));
}

// 1 where the prediction deviates from its local mean by strictly more than
// tau, else 0.
inline torch::Tensor boundary_map(const torch::Tensor& p, const torch::Tensor& pooled,
                                  double tau = 0.1) {
    if (p.sizes() != pooled.sizes()) {
        throw ShapeError("boundary_map shape mismatch");
    }
    return (p - pooled).abs().gt(tau).to(p.dtype());
}

// Interior occupancy: the prediction with the boundary band suppressed.
inline torch::Tensor integrity_map(const torch::Tensor& p, const torch::Tensor& boundary) {
    if (p.sizes() != boundary.sizes()) {
        throw ShapeError("integrity_map shape mismatch");
    }
    return torch::relu(p - boundary);
}

// Per-patch boundary occupancy: score[n] = 1 iff patch n (row-major g x g
// tiling) contains any nonzero element. Returns B x g^2.
inline torch::Tensor patch_boundary_scores(const torch::Tensor& boundary, int64_t g) {
    auto grid = partition_patches(boundary, g);  // g^2 x B x 1 x h/g x w/g
    auto maxima = grid.patches.amax({2, 3, 4});  // g^2 x B
    return maxima.gt(0).to(boundary.dtype()).transpose(0, 1).contiguous();
}

// Full decomposition of a previous prediction at stage resolution.
inline BoundaryArtifacts separate_boundary(const torch::Tensor& prev_pred, int64_t g, double tau) {
    BoundaryArtifacts a;
    a.tau = tau;
    a.prev_prediction = prev_pred;
    a.pooled = pool_prediction(prev_pred);
    a.boundary = boundary_map(prev_pred, a.pooled, tau);
    a.integrity = integrity_map(prev_pred, a.boundary);
    a.patch_scores = patch_boundary_scores(a.boundary, g);
    return a;
}

// Neutral decomposition used where no previous prediction exists (deepest
// stage) or the stage is too small to pool: full integrity, every patch
// flagged, no boundary.
inline BoundaryArtifacts bootstrap_boundary(int64_t batch, int64_t h, int64_t w, int64_t g,
                                            double tau, const torch::TensorOptions& opts) {
    BoundaryArtifacts a;
    a.tau = tau;
    a.prev_prediction = torch::ones({batch, 1, h, w}, opts);
    a.pooled = torch::ones({batch, 1, h, w}, opts);
    a.boundary = torch::zeros({batch, 1, h, w}, opts);
    a.integrity = torch::ones({batch, 1, h, w}, opts);
    a.patch_scores = torch::ones({batch, g * g}, opts);
    return a;
}

}  // namespace pdfnet
