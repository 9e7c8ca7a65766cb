#pragma once

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pdfnet/errors.hpp"
#include "pdfnet/image_io.hpp"

namespace pdfnet {

namespace F = torch::nn::functional;

// Aligned (image, pseudo-depth, mask) sample. `depth` is the network input;
// `depth_supervision` is the higher-fidelity map used as the regression and
// prior target, equal to `depth` when no depths_hq/ file exists.
struct DepthTriplet {
    torch::Tensor image;              // B x 3 x H x W in [0,1]
    torch::Tensor depth;              // B x 1 x H x W in [0,1]
    torch::Tensor depth_supervision;  // B x 1 x H x W in [0,1]
    torch::Tensor mask;               // B x 1 x H x W in {0,1}
    std::string sample_id;

    int64_t height() const { return image.size(2); }
    int64_t width() const { return image.size(3); }
};

inline void validate_triplet(const DepthTriplet& t) {
    const auto b = t.image.size(0), h = t.image.size(2), w = t.image.size(3);
    for (const auto* x : {&t.depth, &t.depth_supervision, &t.mask}) {
        if (x->size(0) != b || x->size(2) != h || x->size(3) != w || x->size(1) != 1) {
            throw ShapeError("triplet tensors disagree in shape for sample " + t.sample_id);
        }
    }
    if (t.image.size(1) != 3) {
        throw ShapeError("image must have 3 channels for sample " + t.sample_id);
    }
    for (const auto* x : {&t.image, &t.depth, &t.depth_supervision}) {
        if (!x->isfinite().all().item<bool>()) {
            throw DataError("non-finite pixel in sample " + t.sample_id);
        }
        if (x->min().item<double>() < 0.0 || x->max().item<double>() > 1.0) {
            throw DataError("values outside [0,1] in sample " + t.sample_id);
        }
    }
    auto binary = (t.mask.eq(0) | t.mask.eq(1)).all().item<bool>();
    if (!binary) {
        throw DataError("mask not binary for sample " + t.sample_id);
    }
}

namespace detail {

inline torch::Tensor resize_bilinear(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

inline torch::Tensor resize_nearest(const torch::Tensor& x, int64_t h, int64_t w) {
    if (x.size(2) == h && x.size(3) == w) return x;
    return F::interpolate(x, F::InterpolateFuncOptions().size(std::vector<int64_t>{h, w}).mode(torch::kNearest));
}

}  // namespace detail

// Loads `root/{images,depths,masks}/{id}.png` (plus optional depths_hq/),
// resized to `resolution`, with the mask binarized at 0.5.
inline DepthTriplet load_triplet(const fs::path& root, const std::string& sample_id,
                                 std::pair<int64_t, int64_t> resolution) {
    const auto [h, w] = resolution;
    DepthTriplet t;
    t.sample_id = sample_id;
    t.image = detail::resize_bilinear(read_image_rgb(root / "images" / (sample_id + ".png")), h, w).clamp(0, 1);
    t.depth = detail::resize_bilinear(read_gray(root / "depths" / (sample_id + ".png")), h, w).clamp(0, 1);
    const auto hq = root / "depths_hq" / (sample_id + ".png");
    t.depth_supervision = fs::exists(hq) ? detail::resize_bilinear(read_gray(hq), h, w).clamp(0, 1) : t.depth;
    auto mask_raw = read_gray(root / "masks" / (sample_id + ".png"));
    t.mask = detail::resize_nearest(mask_raw, h, w).ge(0.5).to(torch::kFloat32);
    for (const auto* x : {&t.image, &t.depth, &t.depth_supervision, &t.mask}) {
        if (x->size(2) != h || x->size(3) != w) {
            throw ShapeError("dimension mismatch after resize for sample " + sample_id);
        }
    }
    validate_triplet(t);
    return t;
}

struct AugmentOptions {
    double flip_prob = 0.5;
    double max_rotate_deg = 15.0;
    double jitter = 0.2;          // brightness/contrast/saturation amplitude
    double crop_min_scale = 0.75; // random crop side-scale lower bound, 1 disables
    bool enabled = true;
};

namespace detail {

inline DepthTriplet geometric_and_color(const DepthTriplet& t, const AugmentOptions& o,
                                        std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    // Draw every parameter up front so the consumption order is fixed.
    const bool flip = uni(rng) < o.flip_prob;
    const double angle = (uni(rng) * 2.0 - 1.0) * o.max_rotate_deg;
    const double crop_scale = o.crop_min_scale + uni(rng) * (1.0 - o.crop_min_scale);
    const double crop_x = uni(rng), crop_y = uni(rng);
    const double br = 1.0 + (uni(rng) * 2.0 - 1.0) * o.jitter;
    const double ct = 1.0 + (uni(rng) * 2.0 - 1.0) * o.jitter;
    const double sat = 1.0 + (uni(rng) * 2.0 - 1.0) * o.jitter;

    auto img = t.image;
    auto dep = t.depth;
    auto dsup = t.depth_supervision;
    auto msk = t.mask;
    const int64_t h = t.height(), w = t.width();

    if (flip) {
        img = img.flip(3);
        dep = dep.flip(3);
        dsup = dsup.flip(3);
        msk = msk.flip(3);
    }
    if (angle != 0.0) {
        const double rad = angle * M_PI / 180.0;
        auto theta = torch::tensor({{{std::cos(rad), -std::sin(rad), 0.0},
                                     {std::sin(rad), std::cos(rad), 0.0}}},
                                   torch::kFloat32);
        auto grid = F::affine_grid(theta.expand({img.size(0), 2, 3}), {img.size(0), 1, h, w}, false);
        auto sample = [&](const torch::Tensor& x, torch::nn::functional::GridSampleFuncOptions::mode_t mode) {
            return F::grid_sample(x, grid, F::GridSampleFuncOptions()
                                               .mode(mode)
                                               .padding_mode(torch::kZeros)
                                               .align_corners(false));
        };
        img = sample(img, torch::kBilinear);
        dep = sample(dep, torch::kBilinear);
        dsup = sample(dsup, torch::kBilinear);
        msk = sample(msk, torch::kNearest);
    }
    if (crop_scale < 1.0) {
        const auto ch = std::max<int64_t>(1, static_cast<int64_t>(std::round(h * crop_scale)));
        const auto cw = std::max<int64_t>(1, static_cast<int64_t>(std::round(w * crop_scale)));
        const auto top = static_cast<int64_t>(std::floor(crop_y * (h - ch + 1)));
        const auto left = static_cast<int64_t>(std::floor(crop_x * (w - cw + 1)));
        auto crop = [&](const torch::Tensor& x) {
            return x.index({torch::indexing::Slice(), torch::indexing::Slice(),
                            torch::indexing::Slice(top, top + ch),
                            torch::indexing::Slice(left, left + cw)});
        };
        img = resize_bilinear(crop(img), h, w);
        dep = resize_bilinear(crop(dep), h, w);
        dsup = resize_bilinear(crop(dsup), h, w);
        msk = resize_nearest(crop(msk), h, w);
    }
    if (o.jitter > 0.0) {
        img = (img * br).clamp(0, 1);
        auto mean = img.mean({2, 3}, true);
        img = ((img - mean) * ct + mean).clamp(0, 1);
        auto gray = (0.299 * img.select(1, 0) + 0.587 * img.select(1, 1) + 0.114 * img.select(1, 2))
                        .unsqueeze(1);
        img = (gray + (img - gray) * sat).clamp(0, 1);
    }

    DepthTriplet out;
    out.image = img.clamp(0, 1);
    out.depth = dep.clamp(0, 1);
    out.depth_supervision = dsup.clamp(0, 1);
    out.mask = msk.ge(0.5).to(torch::kFloat32);
    out.sample_id = t.sample_id;
    return out;
}

}  // namespace detail

// Applies the same geometric transform to all three maps and color jitter to
// the image only. A transform that wipes out a non-empty mask is retried with
// a derived sub-seed, at most 5 times.
inline DepthTriplet augment(const DepthTriplet& t, const AugmentOptions& opts, uint64_t rng_seed) {
    if (!opts.enabled) return t;
    const bool had_fg = t.mask.sum().item<double>() > 0.0;
    for (int attempt = 0; attempt < 5; ++attempt) {
        std::mt19937_64 rng(rng_seed + 0x9e3779b97f4a7c15ULL * static_cast<uint64_t>(attempt));
        auto out = detail::geometric_and_color(t, opts, rng);
        if (!had_fg || out.mask.sum().item<double>() > 0.0) {
            return out;
        }
    }
    throw AugmentError("augmentation emptied the mask 5 times for sample " + t.sample_id);
}

// Lists sample ids under root/images (sorted stems).
inline std::vector<std::string> list_sample_ids(const fs::path& root) {
    const auto dir = root / "images";
    if (!fs::exists(dir)) {
        throw NotFoundError("missing directory: " + dir.string());
    }
    std::vector<std::string> ids;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".png") {
            ids.push_back(e.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

}  // namespace pdfnet
