// SPDX-License-Identifier: Apache-2.0
//
// Lifting 2D optical flow plus per-frame depth into 3D correspondences.
#pragma once

#include <utility>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"

namespace modgs {

struct FlowPair3D {
    Vec3 x_i;
    Vec3 x_j;
    double t_i = 0.0;
    double t_j = 0.0;
};

/// A 3D flow: corresponding world points at two timestamps.
struct SceneFlow3D {
    std::vector<FlowPair3D> pairs;
    std::vector<Vec2> source_pixels;

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }

    void append(const SceneFlow3D& o) {
        pairs.insert(pairs.end(), o.pairs.begin(), o.pairs.end());
        source_pixels.insert(source_pixels.end(), o.source_pixels.begin(), o.source_pixels.end());
    }
};

/// Key frames are 0, s, 2s, ... plus the last frame; consecutive key frames
/// are paired in both directions.
inline std::vector<std::pair<int, int>> keyframe_pairs(int n_frames, int stride) {
    if (stride < 1) throw ArgumentError("keyframe_pairs: stride must be >= 1");
    if (stride >= n_frames) throw ArgumentError("keyframe_pairs: stride must be < frame count");
    std::vector<int> keys;
    for (int k = 0; k < n_frames; k += stride) keys.push_back(k);
    if (keys.back() != n_frames - 1) keys.push_back(n_frames - 1);
    std::vector<std::pair<int, int>> out;
    for (std::size_t k = 0; k + 1 < keys.size(); ++k) {
        out.emplace_back(keys[k], keys[k + 1]);
        out.emplace_back(keys[k + 1], keys[k]);
    }
    return out;
}

/// Pairs each valid pixel of frame i with the point its flow vector lands on
/// in frame j. Targets outside frame j, or whose bilinear footprint touches an
/// invalid depth pixel, are dropped; so are pixels whose flow is flagged invalid
/// when `flow_valid` is given.
inline SceneFlow3D lift(const FrameBundle& frame_i, const FrameBundle& frame_j, const Flow2D& flow,
                        const Mask* flow_valid = nullptr) {
    const int w = frame_i.camera.width(), h = frame_i.camera.height();
    if (!frame_j.depth.same_shape(frame_i.depth) || !frame_i.depth.same_shape(w, h) ||
        !flow.same_shape(w, h) || (flow_valid && !flow_valid->same_shape(w, h)))
        throw ArgumentError("lift: frames and flow must share one image size");
    if (frame_i.t == frame_j.t) throw ArgumentError("lift: frames must have distinct times");

    SceneFlow3D out;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t idx = frame_i.depth.index(x, y);
            if (!frame_i.mask[idx]) continue;
            if (flow_valid && !(*flow_valid)[idx]) continue;
            const Vec2 u{static_cast<double>(x), static_cast<double>(y)};
            const Vec2 target = u + flow[idx];
            double d_j = 0.0;
            if (!bilinear_sample_masked(frame_j.depth, frame_j.mask, target, d_j)) continue;
            if (!(d_j > 0.0)) continue;
            out.pairs.push_back({frame_i.camera.unproject(u, frame_i.depth[idx]),
                                 frame_j.camera.unproject(target, d_j), frame_i.t, frame_j.t});
            out.source_pixels.push_back(u);
        }
    }
    return out;
}

}  // namespace modgs
