#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pdfnet/errors.hpp"
#include "pdfnet/image_io.hpp"

namespace pdfnet {

enum class BgMode { gradient, noise, textured };

inline std::string to_string(BgMode m) {
    switch (m) {
        case BgMode::gradient: return "gradient";
        case BgMode::noise: return "noise";
        case BgMode::textured: return "textured";
    }
    throw DataError("unknown background mode");
}

inline BgMode parse_bg_mode(const std::string& s) {
    if (s == "gradient") return BgMode::gradient;
    if (s == "noise") return BgMode::noise;
    if (s == "textured") return BgMode::textured;
    throw ConfigError("unknown background mode: " + s);
}

namespace detail {

// Splits a seed into per-sample streams so sample i is independent of n.
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace detail

// One generated sample, exposed so tests can inspect maps before quantization.
struct SyntheticSample {
    torch::Tensor image;  // 1x3xHxW
    torch::Tensor depth;  // 1x1xHxW
    torch::Tensor mask;   // 1x1xHxW
    std::string id;
    std::string params;   // manifest payload
};

// Draws one deterministic sample: a solid foreground shape with near-constant
// depth (sigma-controlled) over a high-variance background, with a color
// image whose palette separates foreground from background so the shape is
// recoverable from RGB alone.
inline SyntheticSample make_synthetic_sample(int64_t index, std::pair<int64_t, int64_t> resolution,
                                             double fg_depth_sigma, BgMode bg_mode, uint64_t seed) {
    const auto [h, w] = resolution;
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<uint64_t>(index)));
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    // Foreground support: an axis-aligned ellipse covering ~10-40% of area,
    // kept away from the border so the background always spans the image.
    const double cx = 0.3 + 0.4 * uni(rng);
    const double cy = 0.3 + 0.4 * uni(rng);
    const double rx = 0.12 + 0.18 * uni(rng);
    const double ry = 0.12 + 0.18 * uni(rng);

    auto ys = torch::arange(h, torch::kFloat32).div(static_cast<double>(h)).view({h, 1});
    auto xs = torch::arange(w, torch::kFloat32).div(static_cast<double>(w)).view({1, w});
    auto dist = ((xs - cx) / rx).pow(2) + ((ys - cy) / ry).pow(2);
    auto mask2d = dist.le(1.0).to(torch::kFloat32);  // HxW

    // Depth: constant foreground plateau plus optional noise; background with
    // at least 10x the foreground variance. A gradient span of 0.6 gives a
    // ramp variance of 0.6^2/12 = 0.03, far above 10 * 0.02^2.
    const double fg_level = 0.35 + 0.3 * uni(rng);
    auto noise2d = torch::empty({h, w}, torch::kFloat32);
    {
        std::normal_distribution<double> gauss(0.0, 1.0);
        auto acc = noise2d.accessor<float, 2>();
        for (int64_t r = 0; r < h; ++r)
            for (int64_t c = 0; c < w; ++c) acc[r][c] = static_cast<float>(gauss(rng));
    }
    auto fg_depth = (fg_level + fg_depth_sigma * noise2d).clamp(0.0, 1.0);
    if (fg_depth_sigma == 0.0) fg_depth = torch::full({h, w}, fg_level, torch::kFloat32);

    torch::Tensor bg_depth;
    const double lo = 0.15 * uni(rng);
    switch (bg_mode) {
        case BgMode::gradient: {
            const double span = 0.6 + 0.25 * uni(rng);
            const double angle = uni(rng) * 2.0 * M_PI;
            auto ramp = xs * std::cos(angle) + ys * std::sin(angle);
            ramp = (ramp - ramp.min()) / (ramp.max() - ramp.min()).clamp_min(1e-12);
            bg_depth = lo + span * ramp;
            break;
        }
        case BgMode::noise: {
            auto u = torch::empty({h, w}, torch::kFloat32);
            auto acc = u.accessor<float, 2>();
            for (int64_t r = 0; r < h; ++r)
                for (int64_t c = 0; c < w; ++c) acc[r][c] = static_cast<float>(uni(rng));
            bg_depth = u;  // uniform [0,1]: variance ~ 1/12
            break;
        }
        case BgMode::textured: {
            const double fx = 2.0 + 4.0 * uni(rng);
            const double fy = 2.0 + 4.0 * uni(rng);
            const double px = uni(rng) * 2.0 * M_PI;
            const double py = uni(rng) * 2.0 * M_PI;
            bg_depth = 0.5 + 0.45 * torch::sin(xs * (2.0 * M_PI * fx) + px) *
                                 torch::sin(ys * (2.0 * M_PI * fy) + py);
            break;
        }
    }
    bg_depth = bg_depth.clamp(0.0, 1.0);
    auto depth2d = mask2d * fg_depth + (1.0 - mask2d) * bg_depth;

    // Image: distinct foreground / background colors plus the depth ramp as a
    // luminance cue and mild pixel noise.
    auto color = [&] { return torch::tensor({uni(rng), uni(rng), uni(rng)}, torch::kFloat32); };
    auto fg_color = 0.55 + 0.45 * color();
    auto bg_color = 0.45 * color();
    auto img = torch::empty({3, h, w}, torch::kFloat32);
    for (int64_t ch = 0; ch < 3; ++ch) {
        img[ch] = mask2d * fg_color[ch] + (1.0 - mask2d) * (bg_color[ch] + 0.25 * bg_depth);
    }
    {
        std::normal_distribution<double> gauss(0.0, 0.02);
        auto pix = torch::empty({3, h, w}, torch::kFloat32);
        auto acc = pix.accessor<float, 3>();
        for (int64_t ch = 0; ch < 3; ++ch)
            for (int64_t r = 0; r < h; ++r)
                for (int64_t c = 0; c < w; ++c) acc[ch][r][c] = static_cast<float>(gauss(rng));
        img = (img + pix).clamp(0.0, 1.0);
    }

    SyntheticSample s;
    s.image = img.unsqueeze(0);
    s.depth = depth2d.unsqueeze(0).unsqueeze(0);
    s.mask = mask2d.unsqueeze(0).unsqueeze(0);
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "sample_%04lld", static_cast<long long>(index));
    s.id = idbuf;
    char pbuf[256];
    std::snprintf(pbuf, sizeof(pbuf),
                  "res=%lldx%lld fg_sigma=%.17g bg_mode=%s seed=%llu cx=%.6f cy=%.6f rx=%.6f ry=%.6f fg_level=%.6f",
                  static_cast<long long>(h), static_cast<long long>(w), fg_depth_sigma,
                  to_string(bg_mode).c_str(), static_cast<unsigned long long>(seed), cx, cy, rx,
                  ry, fg_level);
    s.params = pbuf;
    return s;
}

// Writes n samples under root/{images,depths,masks} plus a manifest of
// tab-separated `id<TAB>params` lines. Depth PNGs are 16-bit so a small
// foreground noise floor survives quantization.
inline void make_synthetic_dataset(const fs::path& root, int64_t n,
                                   std::pair<int64_t, int64_t> resolution, double fg_depth_sigma,
                                   BgMode bg_mode, uint64_t seed) {
    if (n < 1) {
        throw DataError("need at least one sample");
    }
    std::error_code ec;
    for (const char* sub : {"images", "depths", "masks"}) {
        fs::create_directories(root / sub, ec);
        if (ec) {
            throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
        }
    }
    std::ofstream manifest(root / "manifest.tsv");
    if (!manifest) {
        throw IoError("cannot write " + (root / "manifest.tsv").string());
    }
    for (int64_t i = 0; i < n; ++i) {
        auto s = make_synthetic_sample(i, resolution, fg_depth_sigma, bg_mode, seed);
        const double fg_area = s.mask.sum().item<double>();
        const auto numel = static_cast<double>(s.mask.numel());
        if (fg_area == 0.0 || fg_area == numel) {
            throw DataError("degenerate mask for " + s.id);
        }
        write_rgb8(root / "images" / (s.id + ".png"), s.image);
        write_gray16(root / "depths" / (s.id + ".png"), s.depth);
        write_gray8(root / "masks" / (s.id + ".png"), s.mask);
        manifest << s.id << '\t' << s.params << '\n';
    }
    manifest.flush();
    if (!manifest) {
        throw IoError("cannot write " + (root / "manifest.tsv").string());
    }
}

}  // namespace pdfnet
