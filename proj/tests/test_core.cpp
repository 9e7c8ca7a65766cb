// Data plumbing and fusion-machinery tests: patch tiling, PNG round trips,
// dataset loading, synthetic generation, augmentation, boundary-integrity
// separation, cross-attention, and the per-stage fusion block.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <random>

#include "pdfnet/pdfnet.hpp"

namespace fs = std::filesystem;
using namespace pdfnet;

namespace {

fs::path fresh_dir(const std::string& tag) {
    auto dir = fs::temp_directory_path() / ("pdfnet_test_" + tag);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void randomize_parameters(torch::nn::Module& m, uint64_t seed) {
    torch::manual_seed(seed);
    torch::NoGradGuard ng;
    for (auto& p : m.parameters()) {
        p.normal_(0.0, 0.05);
    }
}

}  // namespace

TEST_CASE("patch partition and reassembly invert each other") {
    torch::manual_seed(0);
    for (int64_t g : {1, 2, 4, 8, 16}) {
        auto x = torch::rand({2, 3, 32, 48});
        auto grid = partition_patches(x, g);
        REQUIRE(grid.patches.sizes() ==
                torch::IntArrayRef({g * g, 2, 3, 32 / g, 48 / g}));
        REQUIRE(torch::equal(reassemble_patches(grid), x));
    }
}

TEST_CASE("patch order is row-major") {
    // 2x2 grid over a 2x2 image: each patch is one pixel, in reading order.
    auto x = torch::tensor({{{{1.0f, 2.0f}, {3.0f, 4.0f}}}});
    auto grid = partition_patches(x, 2);
    REQUIRE(grid.patches[0].item<float>() == 1.0f);
    REQUIRE(grid.patches[1].item<float>() == 2.0f);
    REQUIRE(grid.patches[2].item<float>() == 3.0f);
    REQUIRE(grid.patches[3].item<float>() == 4.0f);
}

TEST_CASE("patch batch reassembly matches per-patch reassembly") {
    torch::manual_seed(1);
    auto x = torch::rand({3, 5, 16, 16});
    auto grid = partition_patches(x, 4);
    auto flat = grid.patches.reshape({16 * 3, 5, 4, 4});
    REQUIRE(torch::equal(reassemble_patch_batch(flat, 4, 3), x));
}

TEST_CASE("patch partition rejects non-divisible shapes") {
    REQUIRE_THROWS_AS(partition_patches(torch::rand({1, 1, 10, 10}), 4), ShapeError);
    REQUIRE_THROWS_AS(partition_patches(torch::rand({1, 10, 10}), 2), ShapeError);
}

TEST_CASE("PNG round trips preserve quantized values") {
    auto dir = fresh_dir("io");
    auto x = torch::rand({1, 1, 9, 7});
    auto q8 = (x * 255).round() / 255;
    write_gray8(dir / "g8.png", x);
    REQUIRE(torch::allclose(read_gray(dir / "g8.png"), q8, 0, 1e-6));

    auto q16 = (x * 65535).round() / 65535;
    write_gray16(dir / "g16.png", x);
    REQUIRE(torch::allclose(read_gray(dir / "g16.png"), q16, 0, 1e-7));

    auto rgb = torch::rand({1, 3, 5, 6});
    auto rgb8 = (rgb * 255).round() / 255;
    write_rgb8(dir / "rgb.png", rgb);
    REQUIRE(torch::allclose(read_image_rgb(dir / "rgb.png"), rgb8, 0, 1e-6));
}

TEST_CASE("image io reports missing and unwritable paths") {
    REQUIRE_THROWS_AS(read_gray("/nonexistent/nowhere.png"), NotFoundError);
    REQUIRE_THROWS_AS(write_gray8("/nonexistent/dir/out.png", torch::rand({1, 1, 4, 4})),
                      IoError);
}

TEST_CASE("synthetic generator honors the depth-variance contract") {
    for (auto mode : {BgMode::gradient, BgMode::noise, BgMode::textured}) {
        for (int64_t i = 0; i < 5; ++i) {
            auto s = make_synthetic_sample(i, {64, 64}, 0.02, mode, 7);
            auto m = s.mask.squeeze();
            auto d = s.depth.squeeze();
            const double fg_n = m.sum().item<double>();
            REQUIRE(fg_n > 0);
            REQUIRE(fg_n < 64 * 64);
            const auto fg_vals = d.masked_select(m.gt(0.5));
            const auto bg_vals = d.masked_select(m.le(0.5));
            const double var_fg = fg_vals.var(false).item<double>();
            const double var_bg = bg_vals.var(false).item<double>();
            REQUIRE(var_bg > 10 * var_fg);
        }
    }
}

TEST_CASE("synthetic dataset writes a loadable split with manifest") {
    auto dir = fresh_dir("synth");
    make_synthetic_dataset(dir, 3, {64, 48}, 0.02, BgMode::gradient, 11);
    auto ids = list_sample_ids(dir);
    REQUIRE(ids == std::vector<std::string>{"sample_0000", "sample_0001", "sample_0002"});
    REQUIRE(fs::exists(dir / "manifest.tsv"));

    std::ifstream manifest(dir / "manifest.tsv");
    std::string line;
    int64_t lines = 0;
    while (std::getline(manifest, line)) {
        ++lines;
        auto tab = line.find('\t');
        REQUIRE(tab != std::string::npos);
        REQUIRE(line.substr(0, tab).rfind("sample_", 0) == 0);
    }
    REQUIRE(lines == 3);

    auto t = load_triplet(dir, ids[0], {64, 48});
    REQUIRE(t.image.sizes() == torch::IntArrayRef({1, 3, 64, 48}));
    REQUIRE(t.mask.sizes() == torch::IntArrayRef({1, 1, 64, 48}));
    REQUIRE((t.mask.eq(0) | t.mask.eq(1)).all().item<bool>());
    REQUIRE(torch::equal(t.depth_supervision, t.depth));  // no depths_hq present
}

TEST_CASE("synthetic generation into an unwritable root fails loudly") {
    REQUIRE_THROWS_AS(
        make_synthetic_dataset("/proc/definitely_not_writable", 1, {32, 32}, 0.0,
                               BgMode::gradient, 1),
        Error);
}

TEST_CASE("triplet loading resizes and prefers the high-quality depth") {
    auto dir = fresh_dir("triplet");
    make_synthetic_dataset(dir, 1, {64, 64}, 0.02, BgMode::gradient, 3);
    auto at_half = load_triplet(dir, "sample_0000", {32, 32});
    REQUIRE(at_half.image.sizes() == torch::IntArrayRef({1, 3, 32, 32}));

    fs::create_directories(dir / "depths_hq");
    write_gray16(dir / "depths_hq" / "sample_0000.png", torch::full({1, 1, 64, 64}, 0.25f));
    auto with_hq = load_triplet(dir, "sample_0000", {64, 64});
    REQUIRE(torch::allclose(with_hq.depth_supervision,
                            torch::full({1, 1, 64, 64}, 0.25f), 0, 1e-4));
    REQUIRE(!torch::allclose(with_hq.depth, with_hq.depth_supervision));

    REQUIRE_THROWS_AS(load_triplet(dir, "missing_sample", {64, 64}), NotFoundError);
}

TEST_CASE("triplet validation rejects malformed samples") {
    DepthTriplet t;
    t.sample_id = "bad";
    t.image = torch::rand({1, 3, 8, 8});
    t.depth = torch::rand({1, 1, 8, 8});
    t.depth_supervision = torch::rand({1, 1, 8, 8});
    t.mask = torch::rand({1, 1, 8, 8}).ge(0.5).to(torch::kFloat32);
    REQUIRE_NOTHROW(validate_triplet(t));

    auto wrong_shape = t;
    wrong_shape.depth = torch::rand({1, 1, 8, 4});
    REQUIRE_THROWS_AS(validate_triplet(wrong_shape), ShapeError);

    auto out_of_range = t;
    out_of_range.image = t.image + 2.0;
    REQUIRE_THROWS_AS(validate_triplet(out_of_range), DataError);

    auto soft_mask = t;
    soft_mask.mask = torch::full({1, 1, 8, 8}, 0.5f);
    REQUIRE_THROWS_AS(validate_triplet(soft_mask), DataError);

    auto non_finite = t;
    non_finite.depth = t.depth.clone();
    non_finite.depth[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    REQUIRE_THROWS_AS(validate_triplet(non_finite), DataError);
}

TEST_CASE("augmentation is deterministic in its seed and disabled cleanly") {
    auto dir = fresh_dir("aug");
    make_synthetic_dataset(dir, 1, {64, 64}, 0.02, BgMode::gradient, 5);
    auto t = load_triplet(dir, "sample_0000", {64, 64});

    AugmentOptions opts;
    auto a = augment(t, opts, 123);
    auto b = augment(t, opts, 123);
    REQUIRE(torch::equal(a.image, b.image));
    REQUIRE(torch::equal(a.depth, b.depth));
    REQUIRE(torch::equal(a.mask, b.mask));
    auto c = augment(t, opts, 124);
    const bool all_same = torch::equal(a.image, c.image) && torch::equal(a.mask, c.mask);
    REQUIRE(!all_same);

    AugmentOptions off;
    off.enabled = false;
    auto same = augment(t, off, 123);
    REQUIRE(torch::equal(same.image, t.image));
    REQUIRE(torch::equal(same.mask, t.mask));
}

TEST_CASE("pure horizontal flip is exact and mask-preserving") {
    auto dir = fresh_dir("flip");
    make_synthetic_dataset(dir, 1, {64, 64}, 0.02, BgMode::noise, 9);
    auto t = load_triplet(dir, "sample_0000", {64, 64});
    AugmentOptions opts;
    opts.flip_prob = 1.0;
    opts.max_rotate_deg = 0.0;
    opts.jitter = 0.0;
    opts.crop_min_scale = 1.0;
    auto out = augment(t, opts, 1);
    REQUIRE(torch::equal(out.image, t.image.flip(3)));
    REQUIRE(torch::equal(out.depth, t.depth.flip(3)));
    REQUIRE(torch::equal(out.mask, t.mask.flip(3)));
}

TEST_CASE("augmentation never returns an emptied mask") {
    DepthTriplet t;
    t.sample_id = "corner";
    t.image = torch::rand({1, 3, 32, 32});
    t.depth = torch::rand({1, 1, 32, 32});
    t.depth_supervision = t.depth.clone();
    t.mask = torch::zeros({1, 1, 32, 32});
    t.mask[0][0][0][0] = 1.0;  // single corner pixel, easy to crop away

    AugmentOptions opts;
    opts.flip_prob = 0.0;
    opts.max_rotate_deg = 0.0;
    opts.jitter = 0.0;
    opts.crop_min_scale = 0.3;
    int64_t kept = 0, rejected = 0;
    for (uint64_t seed = 0; seed < 50; ++seed) {
        try {
            auto out = augment(t, opts, seed);
            REQUIRE(out.mask.sum().item<double>() > 0.0);
            ++kept;
        } catch (const AugmentError&) {
            ++rejected;
        }
    }
    REQUIRE(kept + rejected == 50);
    REQUIRE(kept > 0);

    // An already-empty mask is legal and passes through without retries.
    auto empty = t;
    empty.mask = torch::zeros({1, 1, 32, 32});
    REQUIRE_NOTHROW(augment(empty, opts, 0));
}

TEST_CASE("prediction pooling matches a naive replicate-padded average") {
    torch::manual_seed(2);
    auto p = torch::rand({1, 1, 16, 20}, torch::kDouble);
    auto pooled = pool_prediction(p);
    REQUIRE(pooled.sizes() == p.sizes());
    const int64_t kh = 16 / 8, kw = 20 / 8;
    const int64_t top = (kh - 1) / 2, left = (kw - 1) / 2;
    auto p2 = p.squeeze();
    auto q2 = pooled.squeeze();
    auto pa = p2.accessor<double, 2>();
    auto qa = q2.accessor<double, 2>();
    for (int64_t r = 0; r < 16; ++r) {
        for (int64_t c = 0; c < 20; ++c) {
            double acc = 0;
            for (int64_t dr = 0; dr < kh; ++dr) {
                for (int64_t dc = 0; dc < kw; ++dc) {
                    const auto rr = std::clamp<int64_t>(r - top + dr, 0, 15);
                    const auto cc = std::clamp<int64_t>(c - left + dc, 0, 19);
                    acc += pa[rr][cc];
                }
            }
            REQUIRE(qa[r][c] == Catch::Approx(acc / (kh * kw)).margin(1e-12));
        }
    }
    REQUIRE_THROWS_AS(pool_prediction(torch::rand({1, 1, 7, 16})), ShapeError);
}

TEST_CASE("boundary band uses a strict threshold and stays disjoint from the interior") {
    auto p = torch::tensor({0.5, 0.61, 0.6, 0.39, 0.4}, torch::kDouble).view({1, 1, 1, 5});
    auto pooled = torch::full({1, 1, 1, 5}, 0.5, torch::kDouble);
    auto b = boundary_map(p, pooled, 0.1);
    // |p - pooled| = 0, .11, .10, .11, .10 -> strictly greater than tau only.
    auto expected = torch::tensor({0.0, 1.0, 0.0, 1.0, 0.0}, torch::kDouble).view({1, 1, 1, 5});
    REQUIRE(torch::equal(b, expected));
    auto s = integrity_map(p, b);
    REQUIRE((s * b).abs().max().item<double>() == 0.0);
    REQUIRE(((s + b) - p).min().item<double>() >= 0.0);
}

TEST_CASE("patch boundary scores flag exactly the patches containing boundary") {
    auto boundary = torch::zeros({2, 1, 8, 8});
    boundary[0][0][0][0] = 1.0;  // batch 0: only top-left patch
    boundary[1][0][7][7] = 1.0;  // batch 1: only bottom-right patch
    auto scores = patch_boundary_scores(boundary, 2);
    REQUIRE(scores.sizes() == torch::IntArrayRef({2, 4}));
    REQUIRE(scores[0][0].item<float>() == 1.0f);
    REQUIRE(scores[0][1].item<float>() == 0.0f);
    REQUIRE(scores[0][2].item<float>() == 0.0f);
    REQUIRE(scores[0][3].item<float>() == 0.0f);
    REQUIRE(scores[1][3].item<float>() == 1.0f);
    REQUIRE(scores[1][0].item<float>() == 0.0f);
}

TEST_CASE("cross-attention block is an exact identity at initialization") {
    CrossAttentionOptions o;
    o.query_dim = 32;
    o.context_dim = 48;
    o.head_count = 4;
    CrossAttentionBlock block(o);
    torch::manual_seed(3);
    auto q = torch::randn({2, 17, 32});
    auto ctx = torch::randn({2, 9, 48});
    auto out = block(q, ctx);
    REQUIRE(torch::equal(out, q));
}

TEST_CASE("cross-attention mixes context once randomized and backpropagates") {
    CrossAttentionOptions o;
    o.query_dim = 16;
    o.context_dim = 16;
    o.head_count = 2;
    CrossAttentionBlock block(o);
    randomize_parameters(*block, 4);
    auto q = torch::randn({1, 6, 16}).requires_grad_(true);
    auto ctx1 = torch::randn({1, 5, 16});
    auto out1 = block(q, ctx1);
    REQUIRE(!torch::allclose(out1, q));
    REQUIRE(out1.isfinite().all().item<bool>());

    out1.sum().backward();
    REQUIRE(q.grad().defined());
    REQUIRE(q.grad().abs().sum().item<double>() > 0.0);
    for (const auto& p : block->named_parameters()) {
        REQUIRE(p.value().grad().defined());
    }

    auto ctx2 = torch::randn({1, 5, 16});
    REQUIRE(!torch::allclose(block(q.detach(), ctx1), block(q.detach(), ctx2)));
    REQUIRE_THROWS_AS(block(torch::randn({1, 4, 8}), ctx1), ShapeError);
    REQUIRE_THROWS_AS(block(q.detach(), torch::randn({1, 4, 8})), ShapeError);
}

TEST_CASE("token extents stay patch-aligned") {
    REQUIRE(token_extent(256, 8, 32) == 32);
    REQUIRE(token_extent(48, 8, 32) == 24);
    REQUIRE(token_extent(4, 8, 32) == 4);   // small stage: keep native size
    REQUIRE(token_extent(1, 2, 8) == 1);
    REQUIRE(token_extent(64, 4, 16) == 16);
}

TEST_CASE("fusion stage returns its inputs exactly at initialization") {
    FusionStageOptions o;
    o.channels = 16;
    o.grid = 4;
    o.token_res = 8;
    o.head_count = 4;
    FusionStage stage(o);
    torch::manual_seed(5);
    auto fv = torch::randn({2, 16, 16, 16});
    auto fd = torch::randn({2, 16, 16, 16});
    auto fp = torch::randn({2, 16, 16, 16});

    SECTION("without a previous prediction") {
        auto out = stage(fv, fd, fp, torch::Tensor());
        REQUIRE(torch::equal(out.visual, fv));
        REQUIRE(torch::equal(out.depth, fd));
        REQUIRE(torch::equal(out.patch, fp));
        // Bootstrap artifacts: full integrity, all patches flagged.
        REQUIRE(out.artifacts.boundary.sum().item<double>() == 0.0);
        REQUIRE(out.artifacts.integrity.min().item<double>() == 1.0);
        REQUIRE(out.artifacts.patch_scores.min().item<double>() == 1.0);
    }
    SECTION("with a previous prediction") {
        auto prev = torch::rand({2, 1, 16, 16});
        auto out = stage(fv, fd, fp, prev);
        REQUIRE(torch::equal(out.visual, fv));
        REQUIRE(torch::equal(out.depth, fd));
        REQUIRE(torch::equal(out.patch, fp));
    }
}

TEST_CASE("fusion artifacts follow the previous prediction") {
    FusionStageOptions o;
    o.channels = 8;
    o.grid = 2;
    o.token_res = 8;
    o.head_count = 2;
    FusionStage stage(o);
    auto fv = torch::randn({1, 8, 16, 16});
    auto prev = torch::rand({1, 1, 16, 16});
    auto out = stage(fv, fv.clone(), fv.clone(), prev);
    auto expected = separate_boundary(prev, 2, o.tau);
    REQUIRE(torch::equal(out.artifacts.boundary, expected.boundary));
    REQUIRE(torch::equal(out.artifacts.integrity, expected.integrity));
    REQUIRE(torch::equal(out.artifacts.patch_scores, expected.patch_scores));
}

TEST_CASE("depth gates cut the depth pathway out of the mask stream") {
    torch::manual_seed(6);
    FusionStageOptions gated;
    gated.channels = 16;
    gated.grid = 2;
    gated.token_res = 8;
    gated.head_count = 4;
    gated.gate_context = 0.0;
    gated.gate_fusion = 0.0;
    FusionStage stage(gated);
    randomize_parameters(*stage, 21);

    auto fv = torch::randn({1, 16, 16, 16});
    auto fp = torch::randn({1, 16, 16, 16});
    auto prev = torch::rand({1, 1, 16, 16});
    auto da = torch::randn({1, 16, 16, 16});
    auto db = torch::randn({1, 16, 16, 16});

    auto out_a = stage(fv, da, fp, prev);
    auto out_b = stage(fv, db, fp, prev);
    REQUIRE(torch::equal(out_a.visual, out_b.visual));
    REQUIRE(torch::equal(out_a.patch, out_b.patch));
    REQUIRE(!torch::allclose(out_a.depth, out_b.depth));

    // With live gates the same change must reach the visual stream.
    FusionStageOptions open = gated;
    open.gate_context = 1.0;
    open.gate_fusion = 1.0;
    FusionStage live(open);
    randomize_parameters(*live, 21);
    auto live_a = live(fv, da, fp, prev);
    auto live_b = live(fv, db, fp, prev);
    REQUIRE(!torch::allclose(live_a.visual, live_b.visual));
}

TEST_CASE("fusion stage validates branch shapes") {
    FusionStageOptions o;
    o.channels = 8;
    o.grid = 2;
    o.head_count = 2;
    FusionStage stage(o);
    auto fv = torch::randn({1, 8, 8, 8});
    REQUIRE_THROWS_AS(stage(fv, torch::randn({1, 8, 8, 4}), fv, torch::Tensor()), ShapeError);
}
