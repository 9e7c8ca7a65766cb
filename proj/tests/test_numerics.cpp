// Numerical agreement tests: every loss and metric is checked against the
// scalar reference implementations in oracles.hpp, plus analytic-gradient
// spot checks and the algebraic identities the training objective promises.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "pdfnet/pdfnet.hpp"

using namespace pdfnet;
using Catch::Approx;

namespace {

torch::Tensor rand_map(int64_t h, int64_t w, double lo = 0.0, double hi = 1.0) {
    return torch::rand({1, 1, h, w}, torch::kDouble) * (hi - lo) + lo;
}

torch::Tensor rand_mask(int64_t h, int64_t w) {
    return torch::rand({1, 1, h, w}, torch::kDouble).ge(0.5).to(torch::kDouble);
}

}  // namespace

TEST_CASE("depth-stability loss matches the scalar reference") {
    torch::manual_seed(100);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = rand_map(6, 7);
        auto m = rand_mask(6, 7);
        auto d = rand_map(6, 7);
        auto [lv, terms] = depth_stability_core(p, m, d);
        const double expect =
            oracle::stability_reference(oracle::to_map(p), oracle::to_map(m), oracle::to_map(d));
        REQUIRE(lv.item<double>() == Approx(expect).margin(1e-12));

        const double msum = m.sum().item<double>();
        if (msum > 0) {
            REQUIRE(terms.mu.item<double>() ==
                    Approx((d * m).sum().item<double>() / msum).margin(1e-12));
        }
    }
}

TEST_CASE("empty masks contribute zero stability loss and an undefined mean") {
    auto p = rand_map(5, 5);
    auto m = torch::zeros({1, 1, 5, 5}, torch::kDouble);
    auto d = rand_map(5, 5);
    auto [lv, terms] = depth_stability_core(p, m, d);
    REQUIRE(lv.item<double>() == 0.0);
    REQUIRE(std::isnan(terms.mu.item<double>()));
    REQUIRE(depth_stability_loss(p, m, d).isfinite().item<bool>());
}

TEST_CASE("hand-computable stability instance") {
    auto m = torch::tensor({1.0, 0.0}, torch::kDouble).view({1, 1, 1, 2});
    auto d = torch::tensor({0.5, 0.9}, torch::kDouble).view({1, 1, 1, 2});
    auto p = torch::tensor({0.8, 0.3}, torch::kDouble).view({1, 1, 1, 2});
    // mu = 0.5. Pixel 1: py=.8, diff=0, fn=.2 -> -log(.8)*.2.
    // Pixel 2: py=.7, diff=.16, fp=.09, fn=0 -> -log(.7)*.0144.
    const double expect = (-std::log(0.8) * 0.2 + -std::log(0.7) * (0.16 * 0.09)) / 2.0;
    const double got = depth_stability_loss(p, m, d).item<double>();
    REQUIRE(got == Approx(expect).margin(1e-12));
    REQUIRE(got == Approx(0.0248824).margin(1e-6));
}

TEST_CASE("depth-continuity loss matches the scalar reference") {
    torch::manual_seed(101);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = rand_map(6, 9);
        auto m = rand_mask(6, 9);
        auto d = rand_map(6, 9);
        const double expect =
            oracle::continuity_reference(oracle::to_map(p), oracle::to_map(m), oracle::to_map(d));
        REQUIRE(depth_continuity_loss(p, m, d).item<double>() == Approx(expect).margin(1e-12));
    }
}

TEST_CASE("flat depth has zero continuity response everywhere") {
    auto p = rand_map(8, 8);
    auto m = rand_mask(8, 8);
    auto d = torch::full({1, 1, 8, 8}, 0.37, torch::kDouble);
    // The convolution sums the cancelling kernel taps in an arbitrary order,
    // so a constant map leaves rounding residue rather than an exact zero.
    REQUIRE(depth_continuity_loss(p, m, d).item<double>() == Approx(0.0).margin(1e-12));
}

TEST_CASE("perfect binary agreement zeroes both depth-prior terms exactly") {
    torch::manual_seed(102);
    for (int trial = 0; trial < 10; ++trial) {
        auto m = rand_mask(10, 10);
        auto d = rand_map(10, 10);
        REQUIRE(depth_stability_loss(m, m, d).item<double>() == 0.0);
        REQUIRE(depth_continuity_loss(m, m, d).item<double>() == 0.0);
        REQUIRE(integrity_prior_loss(m, m, d).first.item<double>() == 0.0);
    }
}

TEST_CASE("integrity prior is the mean of its two terms") {
    auto p = rand_map(7, 7);
    auto m = rand_mask(7, 7);
    auto d = rand_map(7, 7);
    const double lv = depth_stability_loss(p, m, d).item<double>();
    const double lg = depth_continuity_loss(p, m, d).item<double>();
    REQUIRE(integrity_prior_loss(p, m, d).first.item<double>() ==
            Approx((lv + lg) / 2).margin(1e-12));
}

TEST_CASE("border weights match the in-bounds windowed reference") {
    torch::manual_seed(103);
    auto m = rand_mask(20, 20);
    auto w = border_weight(m);
    auto mm = oracle::to_map(m);
    auto w2 = w.squeeze();
    auto wa = w2.accessor<double, 2>();
    for (int64_t r = 0; r < 20; ++r) {
        for (int64_t c = 0; c < 20; ++c) {
            REQUIRE(wa[r][c] ==
                    Approx(oracle::border_weight_reference(mm, r, c)).margin(1e-10));
        }
    }
    REQUIRE(torch::allclose(border_weight(torch::zeros({1, 1, 16, 16}, torch::kDouble)),
                            torch::ones({1, 1, 16, 16}, torch::kDouble), 0, 1e-12));
    REQUIRE(torch::allclose(border_weight(torch::ones({1, 1, 16, 16}, torch::kDouble)),
                            torch::ones({1, 1, 16, 16}, torch::kDouble), 0, 1e-12));
}

TEST_CASE("weighted BCE matches the scalar reference") {
    torch::manual_seed(104);
    for (int trial = 0; trial < 10; ++trial) {
        auto z = torch::randn({1, 1, 12, 12}, torch::kDouble) * 2;
        auto m = rand_mask(12, 12);
        const double expect = oracle::wbce_reference(oracle::to_map(z), oracle::to_map(m));
        REQUIRE(weighted_bce(z, m).item<double>() == Approx(expect).margin(1e-10));
    }
}

TEST_CASE("weighted IoU matches the scalar reference and handles empty pairs") {
    torch::manual_seed(105);
    for (int trial = 0; trial < 10; ++trial) {
        auto p = rand_map(12, 12);
        auto m = rand_mask(12, 12);
        const double expect = oracle::wiou_reference(oracle::to_map(p), oracle::to_map(m));
        REQUIRE(weighted_iou(p, m).item<double>() == Approx(expect).margin(1e-10));
    }
    auto zero = torch::zeros({1, 1, 8, 8}, torch::kDouble);
    REQUIRE(weighted_iou(zero, zero).item<double>() == 0.0);
}

TEST_CASE("SSIM loss matches the scalar reference and vanishes on identity") {
    torch::manual_seed(106);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = rand_map(14, 14);
        auto m = rand_mask(14, 14);
        const double expect = oracle::ssim_reference(oracle::to_map(p), oracle::to_map(m));
        REQUIRE(ssim_loss(p, m).item<double>() == Approx(expect).margin(1e-10));
    }
    auto x = rand_map(16, 16);
    REQUIRE(ssim_loss(x, x).item<double>() == Approx(0.0).margin(1e-6));
}

TEST_CASE("SILog matches the scalar reference and is scale invariant") {
    torch::manual_seed(107);
    for (int trial = 0; trial < 10; ++trial) {
        auto dp = rand_map(10, 10, 0.1, 1.0);
        auto dt = rand_map(10, 10, 0.1, 1.0);
        const double expect = oracle::silog_reference(oracle::to_map(dp), oracle::to_map(dt));
        const double got = silog_loss(dp, dt).item<double>();
        REQUIRE(got == Approx(expect).margin(1e-12));
        // Common rescaling cancels inside the log difference.
        REQUIRE(silog_loss(3 * dp, 3 * dt).item<double>() == Approx(got).margin(1e-9));
    }
    auto d = rand_map(10, 10, 0.1, 1.0);
    REQUIRE(silog_loss(d, d).item<double>() == 0.0);
}

TEST_CASE("stage-loss toggles remove exactly their term") {
    torch::manual_seed(108);
    auto z = torch::randn({2, 1, 16, 16}, torch::kDouble);
    auto m = torch::rand({2, 1, 16, 16}, torch::kDouble).ge(0.5).to(torch::kDouble);
    auto d = torch::rand({2, 1, 16, 16}, torch::kDouble);
    auto p = torch::sigmoid(z);
    auto all_on = stage_loss_core(z, m, d);

    LossToggles no_bce;
    no_bce.use_wbce = false;
    REQUIRE(torch::allclose(all_on - stage_loss_core(z, m, d, no_bce),
                            weighted_bce_core(z, m), 0, 1e-10));
    LossToggles no_iou;
    no_iou.use_wiou = false;
    REQUIRE(torch::allclose(all_on - stage_loss_core(z, m, d, no_iou),
                            weighted_iou_core(p, m), 0, 1e-10));
    LossToggles no_ssim;
    no_ssim.use_ssim = false;
    REQUIRE(torch::allclose(all_on - stage_loss_core(z, m, d, no_ssim),
                            ssim_core(p, m) / 2, 0, 1e-10));
    LossToggles no_inte;
    no_inte.use_inte = false;
    REQUIRE(torch::allclose(all_on - stage_loss_core(z, m, d, no_inte),
                            integrity_prior_core(p, m, d).first, 0, 1e-10));
    LossToggles none;
    none.use_wbce = none.use_wiou = none.use_ssim = none.use_inte = false;
    REQUIRE(stage_loss(z, m, d, none).item<double>() == 0.0);
}

namespace {

PdfnetOutputs fake_outputs(int64_t batch) {
    PdfnetOutputs out;
    const std::array<int64_t, 5> sizes{2, 4, 8, 16, 16};
    for (int64_t s : sizes) {
        auto zl = torch::randn({batch, 1, s, s}, torch::kDouble);
        out.stage_logits.push_back(zl);
        out.stage_predictions.push_back(torch::sigmoid(zl));
        auto zd = torch::randn({batch, 1, s, s}, torch::kDouble);
        out.stage_depth_logits.push_back(zd);
        out.stage_depths.push_back(torch::sigmoid(zd));
    }
    out.final_logit = torch::randn({batch, 1, 32, 32}, torch::kDouble);
    out.final_prediction = torch::sigmoid(out.final_logit);
    out.final_depth_logit = torch::randn({batch, 1, 32, 32}, torch::kDouble);
    out.final_depth = torch::sigmoid(out.final_depth_logit);
    return out;
}

}  // namespace

TEST_CASE("total loss equals the mean of per-sample values and recombines") {
    torch::manual_seed(109);
    auto out = fake_outputs(3);
    auto mask = torch::rand({3, 1, 32, 32}, torch::kDouble).ge(0.5).to(torch::kDouble);
    auto depth = torch::rand({3, 1, 32, 32}, torch::kDouble);

    auto total = total_loss(out, mask, depth);
    auto samples = total_loss_samples(out, mask, depth);
    REQUIRE(samples.sizes() == torch::IntArrayRef({3}));
    REQUIRE(total.value.item<double>() ==
            Approx(samples.mean().item<double>()).margin(1e-12));
    REQUIRE(total.report.total == Approx(total.report.recombine()).margin(1e-15));
    REQUIRE(total.report.total == Approx(total.value.item<double>()).margin(1e-9));
    REQUIRE(total.report.linte ==
            Approx((total.report.lv + total.report.lg) / 2).margin(1e-15));

    // Zero depth weight removes every depth term from the optimized value.
    LossWeights no_depth;
    no_depth.lambda2 = 0.0;
    auto masked = total_loss(out, mask, depth, {}, no_depth);
    double mask_only = masked.report.final_f;
    for (double v : masked.report.stage_f) mask_only += no_depth.lambda1 * v;
    REQUIRE(masked.value.item<double>() == Approx(mask_only).margin(1e-9));
    REQUIRE(masked.report.final_silog > 0.0);  // still reported
    REQUIRE_FALSE(masked.value.requires_grad());
}

TEST_CASE("total loss insists on five supervision stages") {
    auto out = fake_outputs(1);
    out.stage_logits.pop_back();
    auto mask = rand_mask(32, 32);
    auto depth = rand_map(32, 32);
    REQUIRE_THROWS_AS(total_loss(out, mask, depth), ShapeError);
}

TEST_CASE("analytic gradients agree with finite differences (spot checks)") {
    torch::manual_seed(110);
    auto m = rand_mask(8, 8);
    auto d = rand_map(8, 8, 0.05, 0.95);

    SECTION("stability in the prediction") {
        auto p0 = rand_map(8, 8, 0.05, 0.95);
        auto f = [&](const torch::Tensor& p) {
            return depth_stability_core(p, m.expand_as(p), d.expand_as(p)).first;
        };
        REQUIRE(oracle::grad_check(f, p0) < 1e-6);
    }
    SECTION("weighted BCE in the logits") {
        auto z0 = torch::randn({1, 1, 8, 8}, torch::kDouble);
        auto f = [&](const torch::Tensor& z) {
            return weighted_bce_core(z, m.expand_as(z));
        };
        REQUIRE(oracle::grad_check(f, z0) < 1e-6);
    }
    SECTION("SSIM in the prediction") {
        auto p0 = rand_map(8, 8, 0.05, 0.95);
        auto f = [&](const torch::Tensor& p) { return ssim_core(p, m.expand_as(p)); };
        REQUIRE(oracle::grad_check(f, p0) < 1e-6);
    }
    SECTION("SILog in the predicted depth") {
        auto d0 = rand_map(8, 8, 0.1, 0.9);
        auto f = [&](const torch::Tensor& dp) {
            return silog_core(dp, d.expand_as(dp));
        };
        REQUIRE(oracle::grad_check(f, d0) < 1e-6);
    }
}

TEST_CASE("non-finite inputs are rejected up front") {
    auto p = rand_map(6, 6);
    auto bad = p.clone();
    bad[0][0][2][3] = std::numeric_limits<double>::infinity();
    auto m = rand_mask(6, 6);
    auto d = rand_map(6, 6);
    REQUIRE_THROWS_AS(depth_stability_loss(bad, m, d), NumericsError);
    REQUIRE_THROWS_AS(weighted_bce(bad, m), NumericsError);
    REQUIRE_THROWS_AS(silog_loss(bad, d), NumericsError);
    REQUIRE_THROWS_AS(depth_stability_loss(rand_map(4, 4), m, d), ShapeError);
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

TEST_CASE("MAE matches direct counting") {
    torch::manual_seed(120);
    auto p = rand_map(16, 16);
    auto g = rand_mask(16, 16);
    REQUIRE(mae(p, g) ==
            Approx(oracle::mae_reference(oracle::to_map(p), oracle::to_map(g))).margin(1e-14));
    REQUIRE(mae(g, g) == 0.0);
    REQUIRE_THROWS_AS(mae(rand_map(8, 8), g), ShapeError);
}

TEST_CASE("threshold sweep matches naive per-threshold counting") {
    torch::manual_seed(121);
    for (int trial = 0; trial < 5; ++trial) {
        auto p = rand_map(16, 16);
        auto g = rand_mask(16, 16);
        auto curve = f_measure_curve(p, g);
        auto pm = oracle::to_map(p);
        auto gm = oracle::to_map(g);
        double best = 0;
        for (int k = 0; k < 256; ++k) {
            const double thr = k / 255.0;
            int64_t tp = 0, pos = 0, fg = 0;
            for (size_t i = 0; i < pm.v.size(); ++i) {
                const bool pp = pm.v[i] >= thr;
                const bool gg = gm.v[i] > 0.5;
                pos += pp;
                fg += gg;
                tp += pp && gg;
            }
            const double prec = pos > 0 ? double(tp) / pos : 0.0;
            const double rec = fg > 0 ? double(tp) / fg : 0.0;
            REQUIRE(curve.precision[k] == prec);
            REQUIRE(curve.recall[k] == rec);
            const double den = 0.3 * prec + rec;
            const double fb = (pos == 0 || fg == 0 || den == 0)
                                  ? 0.0
                                  : (1 + 0.3) * prec * rec / den;
            REQUIRE(curve.fbeta[k] == fb);
            best = std::max(best, fb);
        }
        REQUIRE(curve.f_max == best);
    }
}

TEST_CASE("threshold sweep degenerate cases") {
    auto empty = torch::zeros({1, 1, 8, 8}, torch::kDouble);
    auto some = rand_mask(8, 8);
    REQUIRE(f_max(some, empty) == 0.0);  // empty ground truth
    // An all-zero prediction still satisfies p >= 0 at threshold 0, so every
    // pixel counts as positive there and that single threshold sets the max.
    const double prec0 = some.sum().item<double>() / 64.0;
    REQUIRE(f_max(empty, some) == (1 + 0.3) * prec0 * 1.0 / (0.3 * prec0 + 1.0));
    auto ones = torch::ones({1, 1, 8, 8}, torch::kDouble);
    REQUIRE(f_max(ones, ones) == 1.0);
    REQUIRE(f_max(some, some) == 1.0);
}

TEST_CASE("weighted F matches the brute-force reference") {
    torch::manual_seed(122);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = rand_map(12, 12);
        auto g = rand_mask(12, 12);
        if (g.sum().item<double>() == 0) continue;
        const double expect =
            oracle::weighted_f_reference(oracle::to_map(p), oracle::to_map(g));
        REQUIRE(weighted_f_measure(p, g) == Approx(expect).margin(1e-9));
    }
    auto g = rand_mask(10, 10);
    REQUIRE(weighted_f_measure(g, g) == Approx(1.0).margin(1e-12));
    REQUIRE(weighted_f_measure(rand_map(10, 10), torch::zeros({1, 1, 10, 10}, torch::kDouble)) ==
            0.0);
}

TEST_CASE("structure measure matches the reference incl. degenerate masks") {
    torch::manual_seed(123);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = rand_map(16, 16);
        auto g = rand_mask(16, 16);
        const double expect = oracle::s_measure_reference(oracle::to_map(p), oracle::to_map(g));
        REQUIRE(s_measure(p, g) == Approx(expect).margin(1e-9));
    }
    auto p = rand_map(9, 9);
    auto zeros = torch::zeros({1, 1, 9, 9}, torch::kDouble);
    auto ones = torch::ones({1, 1, 9, 9}, torch::kDouble);
    REQUIRE(s_measure(p, zeros) ==
            Approx(std::max(0.0, 1.0 - p.mean().item<double>())).margin(1e-12));
    REQUIRE(s_measure(p, ones) ==
            Approx(std::max(0.0, p.mean().item<double>())).margin(1e-12));
    auto g = rand_mask(16, 16);
    REQUIRE(s_measure(g, g) == Approx(1.0).margin(1e-9));
}

TEST_CASE("alignment measure matches the reference incl. degenerate masks") {
    torch::manual_seed(124);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = rand_map(16, 16);
        auto g = rand_mask(16, 16);
        const double expect = oracle::e_measure_reference(oracle::to_map(p), oracle::to_map(g));
        REQUIRE(e_measure(p, g) == Approx(expect).margin(1e-9));
    }
    auto p = rand_map(9, 9);
    auto zeros = torch::zeros({1, 1, 9, 9}, torch::kDouble);
    const double thr = std::min(2.0 * p.mean().item<double>(), 1.0);
    const double fm_mean = p.ge(thr).to(torch::kDouble).mean().item<double>();
    REQUIRE(e_measure(p, zeros) == Approx(1.0 - fm_mean).margin(1e-12));
    auto g = rand_mask(16, 16);
    REQUIRE(e_measure(g, g) == Approx(1.0).margin(1e-9));
}

TEST_CASE("depth variance report matches direct population variance") {
    torch::manual_seed(125);
    auto d = rand_map(16, 16);
    auto g = rand_mask(16, 16);
    auto rep = depth_variance_report(d, g);
    auto dm = oracle::to_map(d);
    auto gm = oracle::to_map(g);
    std::vector<double> fg, bg, all;
    for (size_t i = 0; i < dm.v.size(); ++i) {
        (gm.v[i] > 0.5 ? fg : bg).push_back(dm.v[i]);
        all.push_back(dm.v[i]);
    }
    REQUIRE(rep.var_fg == Approx(oracle::variance_reference(fg)).margin(1e-12));
    REQUIRE(rep.var_bg == Approx(oracle::variance_reference(bg)).margin(1e-12));
    REQUIRE(rep.var_all == Approx(oracle::variance_reference(all)).margin(1e-12));

    auto empty = torch::zeros({1, 1, 8, 8}, torch::kDouble);
    auto rep2 = depth_variance_report(rand_map(8, 8), empty);
    REQUIRE(std::isnan(rep2.var_fg));
    REQUIRE(!std::isnan(rep2.var_bg));
}

TEST_CASE("metrics insist on 2-D single-channel maps") {
    REQUIRE_THROWS_AS(s_measure(torch::rand({1, 3, 8, 8}), torch::rand({1, 1, 8, 8})),
                      ShapeError);
    REQUIRE_THROWS_AS(e_measure(torch::rand({1, 1, 8, 8}), torch::rand({1, 1, 4, 4})),
                      ShapeError);
}

TEST_CASE("masked mean depth propagates the empty sentinel") {
    auto d = rand_map(6, 6);
    auto m = torch::zeros({1, 1, 6, 6}, torch::kDouble);
    REQUIRE(std::isnan(mask_mean_depth(d, m).item<double>()));
    auto m2 = rand_mask(6, 6);
    if (m2.sum().item<double>() > 0) {
        REQUIRE(mask_mean_depth(d, m2).item<double>() ==
                Approx((d * m2).sum().item<double>() / m2.sum().item<double>()).margin(1e-12));
    }
}
