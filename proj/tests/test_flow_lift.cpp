// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>

#include "modgs/flow_lift.hpp"
#include "modgs/random.hpp"
#include "modgs/synth.hpp"

using namespace modgs;

namespace {

const Camera kCam(20, 20, 7.5, 7.5, 16, 16);

FrameBundle frame(double t, const DepthMap& depth, const Camera& cam = kCam) {
    FrameBundle f;
    f.t = t;
    f.camera = cam;
    f.image = Image(cam.width(), cam.height());
    f.depth = depth;
    f.mask = Mask(cam.width(), cam.height(), 1);
    return f;
}

DepthMap random_depth(Rng& rng) {
    DepthMap d(16, 16);
    for (auto& v : d.data()) v = uniform(rng, 1, 3);
    return d;
}

}  // namespace

TEST(KeyframePairs, StrideFiveOfTenClampsToLastFrame) {
    const std::vector<std::pair<int, int>> expected{{0, 5}, {5, 0}, {5, 9}, {9, 5}};
    EXPECT_EQ(keyframe_pairs(10, 5), expected);
}

TEST(KeyframePairs, StrideOneIsEveryConsecutivePair) {
    const auto p = keyframe_pairs(4, 1);
    const std::vector<std::pair<int, int>> expected{{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}};
    EXPECT_EQ(p, expected);
}

TEST(KeyframePairs, TwoFrames) {
    const std::vector<std::pair<int, int>> expected{{0, 1}, {1, 0}};
    EXPECT_EQ(keyframe_pairs(2, 1), expected);
}

TEST(KeyframePairs, BadStride) {
    EXPECT_THROW(keyframe_pairs(10, 10), ArgumentError);
    EXPECT_THROW(keyframe_pairs(10, 0), ArgumentError);
}

TEST(Lift, ZeroFlowIdenticalFramesGivesZeroDisplacement) {
    Rng rng = make_rng(1);
    const DepthMap d = random_depth(rng);
    const SceneFlow3D s = lift(frame(0, d), frame(1, d), Flow2D(16, 16));
    ASSERT_EQ(s.size(), 256u);
    for (const auto& p : s.pairs) {
        EXPECT_EQ(p.x_i, p.x_j);
        EXPECT_EQ(p.t_i, 0.0);
        EXPECT_EQ(p.t_j, 1.0);
    }
}

TEST(Lift, DepthIncreaseMovesAlongTheOpticalRay) {
    const DepthMap di(16, 16, 2.0), dj(16, 16, 3.0);
    const Camera cam(20, 20, 7, 7, 16, 16);
    const SceneFlow3D s = lift(frame(0.2, di, cam), frame(0.4, dj, cam), Flow2D(16, 16));
    for (std::size_t k = 0; k < s.size(); ++k)
        if (s.source_pixels[k] == Vec2{7, 7}) {
            const Vec3 d = s.pairs[k].x_j - s.pairs[k].x_i;
            EXPECT_EQ(d, (Vec3{0, 0, 1}));
            return;
        }
    FAIL() << "principal-point pixel missing";
}

TEST(Lift, MatchesGroundTruthDisplacementOnFrontoParallelWall) {
    // Camera slides parallel to a fronto-parallel wall: depth is constant, so
    // bilinear depth sampling at sub-pixel flow targets is exact, and the
    // camera-relative motion of every wall point is known in closed form.
    SceneSpec s;
    s.n_frames = 3;
    for (int f = 0; f < 3; ++f)
        s.camera_path.push_back(kCam.with_pose(RigidTransform{Mat3::identity(), {0.137 * f, -0.061 * f, 0}}));
    s.keyframe_stride = 1;
    s.wall.point = {0, 0, 2.5};
    s.wall.normal = {0, 0, -1};
    const SyntheticScene scene = generate(s, 0);
    std::size_t checked = 0;
    double worst = 0.0;
    for (const auto& fl : scene.flows) {
        const auto& fi = scene.frames[static_cast<std::size_t>(fl.from)];
        const auto& fj = scene.frames[static_cast<std::size_t>(fl.to)];
        const SceneFlow3D lifted = lift(fi, fj, fl.flow, &fl.valid);
        for (std::size_t k = 0; k < lifted.size(); ++k) {
            const Vec2 u = lifted.source_pixels[k];
            const Vec3 truth = fi.camera.unproject(u, fi.depth(static_cast<int>(u.x), static_cast<int>(u.y)));
            // the wall is static: ground-truth world displacement is zero
            worst = std::max({worst, max_abs(lifted.pairs[k].x_i - truth), max_abs(lifted.pairs[k].x_j - truth)});
            ++checked;
        }
    }
    EXPECT_GT(checked, 300u);
    EXPECT_LT(worst, 1e-5);
}

TEST(Lift, MoverDisplacementCloseToTrajectory) {
    // Curved surfaces make bilinear depth sampling approximate, and silhouette
    // targets can mix wall depth in, so only the typical pixel is bounded.
    SceneSpec s;
    s.n_frames = 2;
    s.camera_path.assign(2, Camera(60, 60, 31.5, 31.5, 64, 64));
    s.keyframe_stride = 1;
    s.wall.point = {0, 0, 5};
    Cluster c;
    c.radius = 0.8;
    c.path.control = {{-0.2, 0, 3}, {0.2, 0.05, 3}};
    s.clusters = {c};
    const SyntheticScene scene = generate(s, 0);
    const Vec3 motion = c.path.at(1) - c.path.at(0);
    const SceneFlow3D lifted = lift(scene.frames[0], scene.frames[1], scene.flows[0].flow, &scene.flows[0].valid);
    std::vector<double> err;
    for (const auto& p : lifted.pairs)
        if (p.x_i.z < 3.0) err.push_back(norm((p.x_j - p.x_i) - motion));  // sphere points
    ASSERT_GT(err.size(), 100u);
    std::nth_element(err.begin(), err.begin() + static_cast<std::ptrdiff_t>(err.size() / 2), err.end());
    EXPECT_LT(err[err.size() / 2], 0.01 * norm(motion));
}

TEST(Lift, SourceEndpointsReprojectToSourcePixels) {
    Rng rng = make_rng(2);
    const Camera ci = kCam.with_pose(look_at({0.1, 0.2, -0.1}, {0, 0, 2}));
    Flow2D flow(16, 16);
    for (auto& v : flow.data()) v = {uniform(rng, -2, 2), uniform(rng, -2, 2)};
    const SceneFlow3D s = lift(frame(0, random_depth(rng), ci), frame(1, random_depth(rng)), flow);
    ASSERT_GT(s.size(), 100u);
    for (std::size_t k = 0; k < s.size(); ++k) {
        const Vec2 q = ci.project(s.pairs[k].x_i).pixel;
        EXPECT_LT(std::abs(q.x - s.source_pixels[k].x), 1e-9);
        EXPECT_LT(std::abs(q.y - s.source_pixels[k].y), 1e-9);
    }
}

TEST(Lift, PairCountNonIncreasingInInvalidPixels) {
    Rng rng = make_rng(3);
    FrameBundle fi = frame(0, random_depth(rng)), fj = frame(1, random_depth(rng));
    Flow2D flow(16, 16);
    for (auto& v : flow.data()) v = {uniform(rng, -3, 3), uniform(rng, -3, 3)};
    std::size_t prev = lift(fi, fj, flow).size();
    EXPECT_LE(prev, count_valid(fi.mask));
    for (int k = 0; k < 60; ++k) {
        FrameBundle& victim = (k % 2) ? fi : fj;
        victim.mask[uniform_index(rng, victim.mask.size())] = 0;
        const std::size_t n = lift(fi, fj, flow).size();
        EXPECT_LE(n, prev);
        EXPECT_LE(n, count_valid(fi.mask));
        prev = n;
    }
}

TEST(Lift, DropsOutOfBoundsAndInvalidFlow) {
    const DepthMap d(16, 16, 2.0);
    Flow2D flow(16, 16, Vec2{20, 0});
    EXPECT_TRUE(lift(frame(0, d), frame(1, d), flow).empty());
    Mask valid(16, 16, 0);
    valid(3, 4) = 1;
    const SceneFlow3D one = lift(frame(0, d), frame(1, d), Flow2D(16, 16), &valid);
    ASSERT_EQ(one.size(), 1u);
    EXPECT_EQ(one.source_pixels[0], (Vec2{3, 4}));
}

TEST(Lift, ArgumentErrors) {
    const DepthMap d(16, 16, 2.0);
    EXPECT_THROW(lift(frame(0, d), frame(1, d), Flow2D(8, 8)), ArgumentError);
    EXPECT_THROW(lift(frame(0.5, d), frame(0.5, d), Flow2D(16, 16)), ArgumentError);
}
