// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "modgs/depth_align.hpp"
#include "modgs/random.hpp"
#include "modgs/scene_io.hpp"
#include "oracles.hpp"

using namespace modgs;

namespace {

const Camera kCam(30, 30, 11.5, 11.5, 24, 24);

DepthMap random_depth(Rng& rng, double lo = 1.0, double hi = 4.0) {
    DepthMap d(24, 24);
    for (auto& v : d.data()) v = uniform(rng, lo, hi);
    return d;
}

StaticMask all_static() { return {Mask(24, 24, 1), 0.5}; }

SceneSpec static_scene_spec() {
    SceneSpec s;
    s.n_frames = 8;
    s.camera_path.assign(8, kCam);
    s.keyframe_stride = 2;
    s.wall.point = {0, 0, 4};
    s.wall.normal = normalized({0.3, -0.2, -1});
    Cluster c;
    c.radius = 0.5;
    c.path.control = {{0.2, 0.1, 2.4}, {-0.5, 0.1, 2.4}};
    s.clusters = {c};
    s.static_fraction = 1.0;
    s.degradation.scale_lo = 0.5;
    s.degradation.scale_hi = 2.0;
    return s;
}

}  // namespace

TEST(StaticMask, ZeroFlowIsAllStatic) {
    const std::vector<Flow2D> flows(3, Flow2D(5, 4));
    const StaticMask m = static_mask(std::span<const Flow2D>(flows), 0.5);
    EXPECT_EQ(count_valid(m.mask), 20u);
    EXPECT_EQ(m.threshold, 0.5);
}

TEST(StaticMask, ZeroThresholdMarksNothingStatic) {
    const std::vector<Flow2D> flows(1, Flow2D(5, 4));
    EXPECT_EQ(count_valid(static_mask(std::span<const Flow2D>(flows), 0.0).mask), 0u);
}

TEST(StaticMask, SingleMovingPixel) {
    std::vector<Flow2D> flows(2, Flow2D(5, 4));
    flows[1](2, 3) = {3, 0};
    const StaticMask m = static_mask(std::span<const Flow2D>(flows), 2.0);
    EXPECT_EQ(m.mask(2, 3), 0);
    EXPECT_EQ(count_valid(m.mask), 19u);
}

TEST(StaticMask, NoFlowsIsArgumentError) {
    EXPECT_THROW(static_mask(std::span<const Flow2D>(), 0.5), ArgumentError);
}

TEST(SolveScale, IdenticalDepthGivesOne) {
    Rng rng = make_rng(1);
    const DepthMap d = random_depth(rng);
    EXPECT_DOUBLE_EQ(solve_scale(d, kCam, d, kCam, all_static()).s, 1.0);
}

TEST(SolveScale, DoubledDepthGivesHalf) {
    Rng rng = make_rng(2);
    const DepthMap d = random_depth(rng);
    DepthMap d2 = d;
    for (auto& v : d2.data()) v *= 2;
    EXPECT_NEAR(solve_scale(d2, kCam, d, kCam, all_static()).s, 0.5, 1e-15);
}

TEST(SolveScale, NoisyFitMatchesGridSearch) {
    Rng rng = make_rng(3);
    const DepthMap ref = random_depth(rng);
    DepthMap cur = ref;
    for (auto& v : cur.data()) v = v * 1.7 + 0.2 * normal(rng), v = std::max(v, 0.1);
    const double s = solve_scale(cur, kCam, ref, kCam, all_static()).s;
    // same camera: projected depth equals the frame's own depth at the same pixel
    const double g = oracle::grid_search_scale(cur.data(), ref.data(), 0.01, 5.0);
    EXPECT_NEAR(s, g, 1e-4);
}

TEST(SolveScale, ScaleEquivariant) {
    Rng rng = make_rng(4);
    // shared camera center: scaling depth then keeps every point on its ray
    const Camera moved = kCam.with_pose(look_at({0, 0, 0}, {0.1, 0.05, 3}));
    const DepthMap ref = random_depth(rng);
    const DepthMap cur = random_depth(rng);
    const double s = solve_scale(cur, moved, ref, kCam, all_static()).s;
    for (double k : {0.25, 3.0, 17.0}) {
        DepthMap scaled = cur;
        for (auto& v : scaled.data()) v *= k;
        EXPECT_NEAR(solve_scale(scaled, moved, ref, kCam, all_static()).s, s / k, 1e-12 * s / k);
    }
}

TEST(SolveScale, TooFewStaticPixelsIsDegenerate) {
    Rng rng = make_rng(5);
    const DepthMap d = random_depth(rng);
    StaticMask few{Mask(24, 24, 0), 0.5};
    for (int k = 0; k < 9; ++k) few.mask[static_cast<std::size_t>(k * 7)] = 1;
    EXPECT_THROW(solve_scale(d, kCam, d, kCam, few), DegenerateError);
    few.mask[200] = 1;
    EXPECT_NO_THROW(solve_scale(d, kCam, d, kCam, few));
}

TEST(SolveScale, PixelsLeavingTheReferenceViewAreDropped) {
    Rng rng = make_rng(6);
    const DepthMap d = random_depth(rng, 2.0, 2.0001);
    // a camera shifted far enough that almost nothing lands inside the reference image
    const Camera far = kCam.with_pose(RigidTransform{Mat3::identity(), {5, 0, 0}});
    EXPECT_THROW(solve_scale(d, far, d, kCam, all_static()), DegenerateError);
}

TEST(Rectify, UnitScalesAreIdentityAndHalfHalves) {
    const SceneData sc = make_scene(static_scene_spec(), 1);
    const std::vector<FrameScale> ones(sc.frames.size()), halves(sc.frames.size(), FrameScale{0.5});
    const auto same = rectify(sc.frames, ones);
    const auto half = rectify(sc.frames, halves);
    for (std::size_t f = 0; f < sc.frames.size(); ++f) {
        EXPECT_EQ(same[f].depth, sc.frames[f].depth);
        EXPECT_EQ(half[f].image, sc.frames[f].image);
        EXPECT_EQ(half[f].mask, sc.frames[f].mask);
        for (std::size_t i = 0; i < sc.frames[f].depth.size(); ++i)
            EXPECT_EQ(half[f].depth[i], sc.frames[f].depth[i] * 0.5);
    }
    EXPECT_THROW(rectify(sc.frames, std::vector<FrameScale>(2)), ArgumentError);
}

TEST(Rectify, RecoversInjectedScalesAndGroundTruth) {
    const SceneSpec spec = static_scene_spec();
    const SceneData sc = make_scene(spec, 3);
    const StaticMask statics = static_mask(std::span<const FlowField>(sc.flows), 0.5);
    const auto scales = solve_scales(sc.frames, statics);
    ASSERT_EQ(scales.size(), sc.frames.size());
    EXPECT_EQ(scales[0].s, 1.0);
    for (std::size_t f = 0; f < scales.size(); ++f)
        EXPECT_NEAR(scales[f].s * sc.degradation.scale[f], 1.0, 1e-2) << "frame " << f;

    // pure per-frame scaling: rectified depth is ground truth up to one global constant
    const auto rect = rectify(sc.frames, scales);
    const double k = rect[0].depth[0] / sc.depth_gt[0][0];
    double worst = 0.0;
    for (std::size_t f = 0; f < rect.size(); ++f)
        for (std::size_t i = 0; i < rect[f].depth.size(); ++i)
            if (rect[f].mask[i])
                worst = std::max(worst, std::abs(rect[f].depth[i] / (k * sc.depth_gt[f][i]) - 1.0));
    EXPECT_LT(worst, 1e-6);
}
