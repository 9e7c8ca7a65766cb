#pragma once

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <ostream>
#include <string>
#include <vector>

#include "pdfnet/boundary.hpp"
#include "pdfnet/config.hpp"
#include "pdfnet/cross_attention.hpp"
#include "pdfnet/losses.hpp"
#include "pdfnet/metrics.hpp"
#include "pdfnet/network.hpp"
#include "pdfnet/patchify.hpp"
#include "pdfnet/synthetic.hpp"

namespace pdfnet {

struct SelfTestResult {
    std::string name;
    bool pass = false;
    std::string detail;
};

// Fast invariant checks (a few seconds, no dataset, no files). Each entry is
// a property that must hold in any healthy build.
inline std::vector<SelfTestResult> run_selftest() {
    std::vector<SelfTestResult> results;
    auto check = [&](const std::string& name, const std::function<std::string()>& body) {
        SelfTestResult r;
        r.name = name;
        try {
            r.detail = body();  // empty string means pass
            r.pass = r.detail.empty();
            if (r.pass) r.detail = "ok";
        } catch (const std::exception& e) {
            r.pass = false;
            r.detail = std::string("exception: ") + e.what();
        }
        results.push_back(std::move(r));
    };
    torch::manual_seed(7);

    check("patch partition round-trip is exact", [] {
        auto x = torch::rand({2, 3, 16, 16});
        auto grid = partition_patches(x, 4);
        auto back = reassemble_patches(grid);
        return torch::equal(back, x) ? "" : "reassembled tensor differs";
    });

    check("boundary band and interior are disjoint", [] {
        auto p = torch::rand({1, 1, 16, 16});
        auto a = separate_boundary(p, 4, 0.1);
        bool binary = a.boundary.mul(1 - a.boundary).abs().max().item<double>() == 0;
        bool disjoint = a.integrity.mul(a.boundary).max().item<double>() == 0;
        bool bounded = a.integrity.min().item<double>() >= 0 &&
                       a.integrity.max().item<double>() <= 1;
        if (!binary) return "boundary map is not 0/1";
        if (!disjoint) return "interior overlaps the boundary band";
        if (!bounded) return "interior left [0,1]";
        return "";
    });

    check("cross-attention starts as the identity", [] {
        CrossAttentionOptions o;
        o.query_dim = 16;
        o.context_dim = 16;
        o.head_count = 4;
        CrossAttentionBlock block(o);
        auto q = torch::randn({2, 9, 16});
        auto ctx = torch::randn({2, 5, 16});
        return torch::equal(block(q, ctx), q) ? "" : "fresh block altered its query";
    });

    check("depth-stability loss matches a hand-computed case", [] {
        auto m = torch::tensor({1.0f, 0.0f}).view({1, 1, 1, 2});
        auto d = torch::tensor({0.5f, 0.9f}).view({1, 1, 1, 2});
        auto p = torch::tensor({0.8f, 0.3f}).view({1, 1, 1, 2});
        double lv = depth_stability_loss(p, m, d).item<double>();
        double expected = 0.0248824;
        if (std::abs(lv - expected) > 1e-6) {
            return "got " + std::to_string(lv) + ", expected " + std::to_string(expected);
        }
        return std::string{};
    });

    check("perfect predictions score perfectly", [] {
        auto m = torch::rand({16, 16}).gt(0.5).to(torch::kDouble);
        m[4][4] = 1.0;
        m[0][0] = 0.0;  // neither empty nor full
        if (std::abs(f_max(m, m) - 1) > 1e-12) return "f_max != 1";
        if (std::abs(weighted_f_measure(m, m) - 1) > 1e-12) return "weighted F != 1";
        if (std::abs(e_measure(m, m) - 1) > 1e-12) return "E-measure != 1";
        if (std::abs(s_measure(m, m) - 1) > 1e-12) return "S-measure != 1";
        if (mae(m, m) != 0) return "MAE != 0";
        return "";
    });

    check("config serialization round-trips", [] {
        RunConfig c;
        c.learning_rate = 3.5e-4;
        c.dataset_root = "/tmp/data";
        c.use_ssim = false;
        c.stage_channels = "8,8,16,16";
        auto text = serialize_config(c);
        auto again = serialize_config(parse_config_string(text));
        return text == again ? "" : "second serialization differs";
    });

    check("scale-invariant depth error vanishes on equal depths", [] {
        auto d = torch::rand({2, 1, 8, 8}) * 0.9 + 0.05;
        double v = silog_loss(d, d).item<double>();
        return v == 0 ? "" : "got " + std::to_string(v);
    });

    check("structural-similarity loss vanishes on equal maps", [] {
        auto p = torch::rand({1, 1, 16, 16});
        double v = ssim_loss(p, p).item<double>();
        if (std::abs(v) > 1e-6) return "got " + std::to_string(v);
        return std::string{};
    });

    check("synthetic generator is seed-deterministic", [] {
        auto a = make_synthetic_sample(3, {32, 32}, 0.05, BgMode::gradient, 99);
        auto b = make_synthetic_sample(3, {32, 32}, 0.05, BgMode::gradient, 99);
        if (!torch::equal(a.image, b.image)) return "images differ";
        if (!torch::equal(a.depth, b.depth)) return "depths differ";
        if (!torch::equal(a.mask, b.mask)) return "masks differ";
        return "";
    });

    check("tiny network forward produces well-formed outputs", [] {
        NetworkConfig c;
        c.grid = 2;
        c.token_res = 8;
        c.head_count = 2;
        c.decoder_channels = 8;
        c.backbone.stage_channels = {8, 8, 16, 16};
        c.backbone.block_depths = {1, 1, 1, 1};
        c.backbone.stem_channels = 8;
        c.patch_depths = {1, 1, 1, 1};
        Pdfnet model(c);
        model->eval();
        torch::NoGradGuard ng;
        auto out = model->forward(torch::rand({1, 3, 64, 64}), torch::rand({1, 1, 64, 64}));
        if (out.stage_predictions.size() != 5) return "expected 5 stage outputs";
        if (out.final_prediction.sizes() != torch::IntArrayRef({1, 1, 64, 64})) {
            return "final prediction has wrong shape";
        }
        double lo = out.final_prediction.min().item<double>();
        double hi = out.final_prediction.max().item<double>();
        if (lo < 0 || hi > 1) return "prediction left [0,1]";
        if (!out.final_depth.isfinite().all().item<bool>()) return "depth output not finite";
        return "";
    });

    return results;
}

// Prints one row per check; returns true iff everything passed.
inline bool print_selftest(std::ostream& os) {
    auto results = run_selftest();
    size_t width = 0;
    for (const auto& r : results) width = std::max(width, r.name.size());
    bool all = true;
    for (const auto& r : results) {
        os << (r.pass ? "[pass] " : "[FAIL] ") << std::left << std::setw(static_cast<int>(width))
           << r.name << "  " << r.detail << '\n';
        all = all && r.pass;
    }
    os << (all ? "self-test passed" : "SELF-TEST FAILED") << " (" << results.size() << " checks)"
       << '\n';
    return all;
}

}  // namespace pdfnet
