// SPDX-License-Identifier: Apache-2.0
//
// Per-frame depth scale unification: static pixels are found by thresholding
// optical flow, then each frame's depth is fit to the first frame with a
// single multiplicative scale.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"

namespace modgs {

struct StaticMask {
    Mask mask;
    double threshold = 0.0;
};

struct FrameScale {
    double s = 1.0;
};

/// A pixel is static iff its flow magnitude is strictly below `threshold` in
/// every field.
inline StaticMask static_mask(std::span<const Flow2D> flows, double threshold) {
    if (flows.empty()) throw ArgumentError("static_mask: no flow fields given");
    const int w = flows.front().width(), h = flows.front().height();
    StaticMask out{Mask(w, h, 1), threshold};
    for (const Flow2D& f : flows) {
        if (!f.same_shape(w, h)) throw ArgumentError("static_mask: flow fields differ in size");
        for (std::size_t i = 0; i < f.size(); ++i)
            if (!(norm(f[i]) < threshold)) out.mask[i] = 0;
    }
    return out;
}

inline StaticMask static_mask(std::span<const FlowField> flows, double threshold) {
    std::vector<Flow2D> fields;
    fields.reserve(flows.size());
    for (const auto& f : flows) fields.push_back(f.flow);
    return static_mask(std::span<const Flow2D>(fields), threshold);
}

inline constexpr std::size_t kMinStaticPixels = 10;

namespace detail {
inline double snap_to_range(double v, double hi) {
    if (v < 0.0 && v > -1e-9) return 0.0;
    if (v > hi && v < hi + 1e-9) return hi;
    return v;
}
}  // namespace detail

/// Scale s minimizing Σ (s·d_proj − D_ref(u'))² over static pixels of frame t,
/// where d_proj and u' are the reference-camera depth and pixel of the
/// unprojected point. Valid pixels are those with positive depth; reference
/// depths are bilinearly sampled and only used when all contributing
/// neighbors are valid.
inline FrameScale solve_scale(const DepthMap& depth_t, const Camera& camera_t,
                              const DepthMap& depth_ref, const Camera& camera_ref,
                              const StaticMask& statics) {
    if (!depth_t.same_shape(statics.mask) || !depth_t.same_shape(camera_t.width(), camera_t.height()) ||
        !depth_ref.same_shape(camera_ref.width(), camera_ref.height()))
        throw ArgumentError("solve_scale: depth, mask and camera sizes differ");

    Mask ref_valid(depth_ref.width(), depth_ref.height(), 0);
    for (std::size_t i = 0; i < depth_ref.size(); ++i) ref_valid[i] = depth_ref[i] > 0.0;

    double num = 0.0, den = 0.0;
    std::size_t used = 0;
    for (int y = 0; y < depth_t.height(); ++y)
        for (int x = 0; x < depth_t.width(); ++x) {
            const std::size_t i = depth_t.index(x, y);
            if (!statics.mask[i] || !(depth_t[i] > 0.0)) continue;
            const Vec3 world = camera_t.unproject({static_cast<double>(x), static_cast<double>(y)}, depth_t[i]);
            if (camera_ref.view().apply(world).z <= 1e-9) continue;
            Projection p = camera_ref.project(world);
            // absorb round-trip noise at the image border
            p.pixel.x = detail::snap_to_range(p.pixel.x, camera_ref.width() - 1);
            p.pixel.y = detail::snap_to_range(p.pixel.y, camera_ref.height() - 1);
            double d_ref = 0.0;
            if (!bilinear_sample_masked(depth_ref, ref_valid, p.pixel, d_ref)) continue;
            num += p.depth * d_ref;
            den += p.depth * p.depth;
            ++used;
        }
    if (used < kMinStaticPixels)
        throw DegenerateError("solve_scale: only " + std::to_string(used) +
                              " static pixels reproject into the reference frame (need " +
                              std::to_string(kMinStaticPixels) + ")");
    const double s = num / den;
    if (!(s > 0.0) || !std::isfinite(s)) throw DegenerateError("solve_scale: non-positive scale");
    return {s};
}

/// Scales of every frame relative to frame 0 (whose scale is 1).
inline std::vector<FrameScale> solve_scales(std::span<const FrameBundle> frames, const StaticMask& statics) {
    if (frames.empty()) throw ArgumentError("solve_scales: no frames");
    std::vector<FrameScale> out{FrameScale{1.0}};
    for (std::size_t f = 1; f < frames.size(); ++f) {
        try {
            out.push_back(solve_scale(frames[f].depth, frames[f].camera, frames[0].depth,
                                      frames[0].camera, statics));
        } catch (const DegenerateError& e) {
            throw DegenerateError("frame " + std::to_string(f) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<FrameBundle> rectify(std::span<const FrameBundle> frames,
                                        std::span<const FrameScale> scales) {
    if (frames.size() != scales.size())
        throw ArgumentError("rectify: need exactly one scale per frame");
    std::vector<FrameBundle> out(frames.begin(), frames.end());
    for (std::size_t f = 0; f < out.size(); ++f) {
        if (!(scales[f].s > 0.0)) throw ArgumentError("rectify: scales must be positive");
        auto& d = out[f].depth;
        for (std::size_t i = 0; i < d.size(); ++i)
            if (out[f].mask[i]) d[i] *= scales[f].s;
    }
    return out;
}

}  // namespace modgs
