// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "modgs/splat.hpp"
#include "oracles.hpp"

using namespace modgs;

namespace {

GaussianSet random_set(Rng& rng, std::size_t n, double ls_lo, double ls_hi) {
    GaussianSet g;
    for (std::size_t i = 0; i < n; ++i) {
        const Quat q{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        g.push_back({uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, 2.5, 4.0)},
                    {uniform(rng, ls_lo, ls_hi), uniform(rng, ls_lo, ls_hi), uniform(rng, ls_lo, ls_hi)}, q,
                    uniform(rng, -1, 1), {uniform(rng), uniform(rng), uniform(rng)});
    }
    return g;
}

/// Random linear functional of the render outputs: its value and its gradient maps.
struct Probe {
    Image wi;
    DepthMap wd;
    Grid2D<double> wa;

    Probe(Rng& rng, int w, int h) : wi(w, h), wd(w, h), wa(w, h) {
        for (auto& v : wi.data()) v = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        for (auto& v : wd.data()) v = uniform(rng, -1, 1);
        for (auto& v : wa.data()) v = uniform(rng, -1, 1);
    }
    double operator()(const RenderOutput& r) const {
        double s = 0;
        for (std::size_t i = 0; i < wi.size(); ++i) s += dot(wi[i], r.image[i]) + wd[i] * r.depth[i] + wa[i] * r.alpha[i];
        return s;
    }
    RenderGradInput grads() const { return {wi, wd, wa}; }
};

const Camera kCam8(8, 8, 3.5, 3.5, 8, 8);
const Camera kCam16(16, 16, 7.5, 7.5, 16, 16);
const Rgb kBg{0.1, 0.2, 0.3};

std::vector<std::array<double, 3>> sorted_points(const std::vector<Vec3>& v) {
    std::vector<std::array<double, 3>> out;
    for (const auto& p : v) out.push_back({p.x, p.y, p.z});
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

TEST(Voxel, TwoPointsInOneVoxelBecomeTheirCentroid) {
    const std::vector<Vec3> pts{{0.01, 0.01, 0.01}, {0.03, 0.02, 0.04}};
    const std::vector<Rgb> cols{{1, 0, 0}, {0, 0, 1}};
    const auto cells = voxel_downsample(pts, cols, 0.05);
    ASSERT_EQ(cells.size(), 1u);
    EXPECT_LT(max_abs(cells[0].centroid - Vec3{0.02, 0.015, 0.025}), 1e-15);
    EXPECT_EQ(cells[0].color, (Rgb{0.5, 0, 0.5}));
    EXPECT_EQ(cells[0].count, 2u);
}

TEST(Voxel, WellSeparatedPointsAreAllKept) {
    const std::vector<Vec3> pts{{0, 0, 0}, {0.3, 0.3, 0.3}, {-0.3, 0.6, -0.9}};
    const auto cells = voxel_downsample(pts, std::vector<Rgb>(3), 0.25);
    EXPECT_EQ(sorted_points({cells[0].centroid, cells[1].centroid, cells[2].centroid}), sorted_points(pts));
}

TEST(Voxel, MatchesHashGridOracle) {
    Rng rng = make_rng(1);
    for (double voxel : {0.05, 0.13, 0.4}) {
        std::vector<Vec3> pts(1000);
        for (auto& p : pts) p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        const auto cells = voxel_downsample(pts, std::vector<Rgb>(pts.size()), voxel);
        std::vector<Vec3> got;
        for (const auto& c : cells) got.push_back(c.centroid);
        const auto a = sorted_points(got), b = sorted_points(oracle::hash_grid_downsample(pts, voxel));
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i)
            for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(a[i][c], b[i][c], 1e-9);
    }
}

TEST(Voxel, ArgumentErrors) {
    const std::vector<Vec3> pts(2);
    EXPECT_THROW(voxel_downsample(pts, std::vector<Rgb>(1), 0.1), ArgumentError);
    EXPECT_THROW(voxel_downsample(pts, std::vector<Rgb>(2), 0.0), ArgumentError);
}

TEST(InitGaussians, OnePerVoxelWithDefaultAttributes) {
    FrameBundle f;
    f.camera = Camera(10, 10, 1.5, 0, 2, 1);
    f.image = Image(2, 1, std::vector<Rgb>{{1, 0, 0}, {0, 1, 0}});
    f.depth = DepthMap(2, 1, 1.0);
    f.mask = Mask(2, 1, 1);
    f.t = 0.5;
    // pixels 0 and 1 unproject to x = -0.15 and -0.05: one voxel of edge 0.5 holds both
    const std::vector<FrameBundle> frames{f};
    const GaussianSet g = init_gaussians(frames, WarpField(WarpConfig{2, 4, 1, 3}), 0.5);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_NEAR(g.position[0].x, -0.1, 1e-15);
    EXPECT_EQ(g.position[0].z, 1.0);
    EXPECT_EQ(g.color[0], (Rgb{0.5, 0.5, 0}));
    EXPECT_EQ(g.log_scale[0], (Vec3{std::log(0.5), std::log(0.5), std::log(0.5)}));
    EXPECT_EQ(g.rotation[0].w, 1.0);
    EXPECT_EQ(g.opacity_logit[0], logit(0.5));
    // a finer voxel separates them
    EXPECT_EQ(init_gaussians(frames, WarpField(WarpConfig{2, 4, 1, 3}), 0.02).size(), 2u);
}

TEST(InitGaussians, PullsPointsBackThroughTheField) {
    FrameBundle f;
    f.camera = Camera(10, 10, 0, 0, 1, 1);
    f.image = Image(1, 1);
    f.depth = DepthMap(1, 1, 2.0);
    f.mask = Mask(1, 1, 1);
    f.t = 0.7;
    WarpField field(WarpConfig{1, 4, 1, 3});
    field.freeze_block_output(0, 0.0, 0.3);
    const GaussianSet g = init_gaussians(std::vector<FrameBundle>{f}, field, 0.01);
    ASSERT_EQ(g.size(), 1u);
    EXPECT_NEAR(g.position[0].x, -0.3, 1e-12);
}

TEST(InitGaussians, NoValidPixelsIsInitializationError) {
    FrameBundle f;
    f.camera = Camera(10, 10, 0, 0, 2, 2);
    f.image = Image(2, 2);
    f.depth = DepthMap(2, 2, 1.0);
    f.mask = Mask(2, 2, 0);
    EXPECT_THROW(init_gaussians(std::vector<FrameBundle>{f}, WarpField(WarpConfig{}), 0.1), InitializationError);
}

TEST(Deform, ZeroFieldIsIdentityAndOnlyPositionsMove) {
    Rng rng = make_rng(2);
    const GaussianSet g = random_set(rng, 6, -2, -1);
    EXPECT_EQ(deform(g, WarpField(WarpConfig{}), 0.4), g);
    const WarpField f = WarpField::random(WarpConfig{6, 8, 2, 3}, 3, 0.3);
    const GaussianSet d = deform(g, f, 0.4);
    EXPECT_NE(d.position, g.position);
    EXPECT_EQ(d.log_scale, g.log_scale);
    EXPECT_EQ(d.rotation, g.rotation);
    EXPECT_EQ(d.opacity_logit, g.opacity_logit);
    EXPECT_EQ(d.color, g.color);
    for (std::size_t i = 0; i < g.size(); ++i) EXPECT_LT(max_abs(f.inverse(d.position[i], 0.4) - g.position[i]), 1e-5);
    EXPECT_THROW(deform(g, f, 1.2), ArgumentError);
}

TEST(Deform, FrozenTranslationShiftsPosition) {
    GaussianSet g;
    g.push_back({0.1, -0.2, 0.5}, {}, {}, 0, {});
    WarpField f(WarpConfig{1, 4, 2, 3});
    f.freeze_block_output(0, 0.0, 0.3);
    const Vec3 p = deform(g, f, 0.5).position[0];
    EXPECT_LT(max_abs(p - Vec3{0.4, -0.2, 0.5}), 1e-15);
}

TEST(Render, EmptySetIsBackground) {
    const RenderOutput r = render(GaussianSet{}, kCam16, kBg);
    for (std::size_t i = 0; i < r.image.size(); ++i) {
        EXPECT_EQ(r.image[i], kBg);
        EXPECT_EQ(r.alpha[i], 0.0);
        EXPECT_EQ(r.depth[i], RenderSettings{}.depth_sentinel);
    }
}

TEST(Render, NearOpaqueGaussianOnPixelRay) {
    GaussianSet g;
    g.push_back({0, 0, 2.5}, {std::log(0.05), std::log(0.05), std::log(0.05)}, {}, 30.0, {0.9, 0.4, 0.1});
    const RenderOutput r = render(g, Camera(16, 16, 7, 7, 16, 16), kBg);
    EXPECT_NEAR(r.image(7, 7).r, 0.9, 1e-12);
    EXPECT_NEAR(r.image(7, 7).g, 0.4, 1e-12);
    EXPECT_NEAR(r.alpha(7, 7), 1.0, 1e-12);
    EXPECT_NEAR(r.depth(7, 7), 2.5, 1e-12);
    EXPECT_EQ(r.image(0, 0), kBg);  // far outside the footprint
}

TEST(Render, MatchesBruteForceCompositor) {
    Rng rng = make_rng(4);
    double worst = 0.0;
    for (int k = 0; k < 50; ++k) {
        const GaussianSet g = random_set(rng, 1 + uniform_index(rng, 5), -2.5, -1.2);
        const RenderOutput a = render(g, kCam16, kBg);
        Image img;
        DepthMap depth;
        Grid2D<double> alpha;
        oracle::brute_force_render(g, kCam16, kBg, img, depth, alpha);
        for (std::size_t i = 0; i < img.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) worst = std::max(worst, std::abs(a.image[i][c] - img[i][c]));
            worst = std::max({worst, std::abs(a.depth[i] - depth[i]), std::abs(a.alpha[i] - alpha[i])});
        }
    }
    EXPECT_LT(worst, 1e-6);
}

TEST(Render, TileSizeDoesNotChangeTheImage) {
    Rng rng = make_rng(5);
    const GaussianSet g = random_set(rng, 20, -2.5, -1.0);
    RenderSettings small;
    small.tile = 3;
    const RenderOutput a = render(g, kCam16, kBg), b = render(g, kCam16, kBg, small);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.depth, b.depth);
}

TEST(Render, CompositingWeightsSumToOne) {
    Rng rng = make_rng(6);
    for (int k = 0; k < 10; ++k) {
        GaussianSet g = random_set(rng, 8, -2, -0.8);
        for (auto& o : g.opacity_logit) o = uniform(rng, -2, 6);
        for (auto& c : g.color) c = {1, 1, 1};
        // white Gaussians on black: the image is Σ weights; with a white
        // background it is Σ weights + T
        const RenderOutput w = render(g, kCam16, {0, 0, 0}), wb = render(g, kCam16, {1, 1, 1});
        for (std::size_t i = 0; i < w.image.size(); ++i) {
            EXPECT_GE(w.alpha[i], 0.0);
            EXPECT_LE(w.alpha[i], 1.0);
            EXPECT_LE(w.image[i].r, 1.0 + 1e-12);
            EXPECT_NEAR(w.image[i].r, w.alpha[i], 1e-12);
            EXPECT_NEAR(wb.image[i].r, 1.0, 1e-6);
        }
    }
}

TEST(Render, InvariantToInputOrder) {
    Rng rng = make_rng(7);
    const GaussianSet g = random_set(rng, 12, -2, -1);
    std::vector<std::size_t> perm(g.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    GaussianSet p;
    for (std::size_t i : perm) p.push_back(g.position[i], g.log_scale[i], g.rotation[i], g.opacity_logit[i], g.color[i]);
    const RenderOutput a = render(g, kCam16, kBg), b = render(p, kCam16, kBg);
    EXPECT_EQ(a.image, b.image);
    EXPECT_EQ(a.depth, b.depth);
    EXPECT_EQ(a.alpha, b.alpha);
}

TEST(Render, CullsGaussiansBehindTheCamera) {
    GaussianSet g;
    g.push_back({0, 0, -1}, {0, 0, 0}, {}, 5, {1, 1, 1});
    const RenderOutput r = render(g, kCam16, kBg);
    for (std::size_t i = 0; i < r.image.size(); ++i) EXPECT_EQ(r.image[i], kBg);
}

TEST(RenderGrad, MatchesCentralDifferencesOnEveryAttribute) {
    Rng rng = make_rng(8);
    for (int scene = 0; scene < 3; ++scene) {
        // large footprints: no pixel sits near the 3-sigma cutoff, so the loss is smooth
        GaussianSet g = random_set(rng, 5, std::log(0.9), std::log(1.3));
        const Probe probe(rng, 8, 8);
        RenderTape tape;
        const RenderOutput fwd = render(g, kCam8, kBg, {}, &tape);
        const GaussianGrads an = render_backward(g, kCam8, kBg, fwd, tape, probe.grads());
        auto loss = [&] { return probe(render(g, kCam8, kBg)); };
        double worst = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            for (std::size_t c = 0; c < 3; ++c) {
                worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.position[i][c]), an.position[i][c]));
                worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.log_scale[i][c]), an.log_scale[i][c]));
                worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.color[i][c]), an.color[i][c]));
            }
            worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.opacity_logit[i]), an.opacity_logit[i]));
            worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.rotation[i].w), an.rotation[i].w));
            worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.rotation[i].x), an.rotation[i].x));
            worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.rotation[i].y), an.rotation[i].y));
            worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, g.rotation[i].z), an.rotation[i].z));
        }
        EXPECT_LT(worst, 1e-3) << "scene " << scene;
    }
}

TEST(RenderGrad, FlowsThroughDeformationToWarpParameters) {
    Rng rng = make_rng(9);
    const GaussianSet canon = random_set(rng, 5, std::log(0.9), std::log(1.3));
    WarpField field = WarpField::random(WarpConfig{3, 4, 1, 3}, 9, 0.2);
    const Probe probe(rng, 8, 8);
    const double t = 0.35;

    WarpField::Tape wt;
    const GaussianSet g = deform(canon, field, t, &wt);
    RenderTape rt;
    const RenderOutput fwd = render(g, kCam8, kBg, {}, &rt);
    const GaussianGrads gg = render_backward(g, kCam8, kBg, fwd, rt, probe.grads());
    std::vector<double> an(field.num_params(), 0.0);
    field.forward_backward(wt, gg.position, {}, an);

    auto loss = [&] { return probe(render(deform(canon, field, t), kCam8, kBg)); };
    auto params = field.params();
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i)
        worst = std::max(worst, oracle::relative_error(oracle::central_difference(loss, params[i]), an[i]));
    EXPECT_LT(worst, 1e-3);
}

TEST(RenderGrad, InvisibleGaussianGetsZeroGradient) {
    Rng rng = make_rng(10);
    GaussianSet g = random_set(rng, 3, std::log(0.9), std::log(1.1));
    g.push_back({60, 0, 3}, {-1, -1, -1}, {}, 2.0, {1, 0, 0});
    const Probe probe(rng, 8, 8);
    RenderTape tape;
    const RenderOutput fwd = render(g, kCam8, kBg, {}, &tape);
    const GaussianGrads an = render_backward(g, kCam8, kBg, fwd, tape, probe.grads());
    EXPECT_EQ(an.position[3], (Vec3{}));
    EXPECT_EQ(an.log_scale[3], (Vec3{}));
    EXPECT_EQ(an.color[3], (Rgb{}));
    EXPECT_EQ(an.opacity_logit[3], 0.0);
}

TEST(RenderGrad, MirrorSymmetricSceneHasMirrorGradients) {
    GaussianSet g;
    const double ls = std::log(0.4);
    g.push_back({-0.5, 0.1, 3}, {ls, ls, ls}, {}, 0.5, {0.8, 0.3, 0.2});
    g.push_back({0.5, 0.1, 3}, {ls, ls, ls}, {}, 0.5, {0.8, 0.3, 0.2});
    Image ones(8, 8, Rgb{1, 1, 1});
    RenderTape tape;
    const RenderOutput fwd = render(g, kCam8, kBg, {}, &tape);
    const GaussianGrads an = render_backward(g, kCam8, kBg, fwd, tape, {ones, {}, {}});
    EXPECT_NEAR(an.position[0].x, -an.position[1].x, 1e-12);
    EXPECT_NEAR(an.position[0].y, an.position[1].y, 1e-12);
    EXPECT_NEAR(an.position[0].z, an.position[1].z, 1e-12);
    EXPECT_NE(an.position[0].x, 0.0);
}

TEST(GaussianSet, SanitizeNormalizesQuaternionsAndClampsColor) {
    GaussianSet g;
    g.push_back({}, {}, Quat{2, 0.1, -0.3, 0.5}, 0, {1.4, -0.2, 0.5});
    g.sanitize();
    EXPECT_NEAR(g.rotation[0].norm(), 1.0, 1e-12);
    EXPECT_EQ(g.color[0], (Rgb{1, 0, 0.5}));
}

TEST(GaussianSet, PlyExportHasHeaderAndOneLinePerGaussian) {
    Rng rng = make_rng(11);
    const GaussianSet g = random_set(rng, 4, -2, -1);
    const auto path = std::filesystem::temp_directory_path() / "modgs_test.ply";
    save_ply(path, g);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "ply");
    bool has_count = false;
    while (std::getline(is, line) && line != "end_header") has_count |= line == "element vertex 4";
    EXPECT_TRUE(has_count);
    int rows = 0;
    while (std::getline(is, line)) rows += !line.empty();
    EXPECT_EQ(rows, 4);
    std::filesystem::remove(path);
}
