// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dynamic scenes with exact ground truth, and a depth degradation
// model that mimics per-frame inconsistent single-view depth estimates.
//
// A scene is one static textured wall (a plane) and a few textured spheres
// translating along Bezier paths. Everything is ray cast analytically, so
// depth and optical flow are exact and occlusion is decided per ray.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <tuple>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "modgs/errors.hpp"
#include "modgs/flow_lift.hpp"
#include "modgs/geometry.hpp"
#include "modgs/random.hpp"

namespace modgs {

/// Bezier curve over t ∈ [0,1].
struct Trajectory {
    std::vector<Vec3> control;

    Vec3 at(double t) const {
        if (control.empty()) return {};
        std::vector<Vec3> p = control;
        for (std::size_t n = p.size(); n > 1; --n)
            for (std::size_t i = 0; i + 1 < n; ++i) p[i] = p[i] * (1.0 - t) + p[i + 1] * t;
        return p[0];
    }
};

struct Cluster {
    std::string name;
    double radius = 0.5;
    Rgb color_a{0.9, 0.2, 0.2};
    Rgb color_b{0.9, 0.8, 0.3};
    double frequency = 6.0;  // texture frequency, radians per scene unit
    Trajectory path;
};

struct Wall {
    Vec3 point{0, 0, 5};
    Vec3 normal{0, 0, -1};
    Rgb color_a{0.2, 0.4, 0.8};
    Rgb color_b{0.9, 0.9, 0.9};
    double period = 1.5;
};

struct NamedCameraPath {
    std::string name;
    std::vector<Camera> cameras;  // one per frame
};

/// Ranges the per-frame degradation parameters are drawn from. Scale and gamma
/// are log-uniform, offset uniform.
struct DegradationRanges {
    double scale_lo = 1.0, scale_hi = 1.0;
    double offset_lo = 0.0, offset_hi = 0.0;
    double gamma_lo = 1.0, gamma_hi = 1.0;
    double noise_sigma = 0.0;
};

struct SceneSpec {
    int n_frames = 20;
    std::vector<Camera> camera_path;  // training camera, one per frame
    std::vector<NamedCameraPath> holdout;
    Wall wall;
    std::vector<Cluster> clusters;
    /// The first round(static_fraction · #clusters) clusters stay at their t=0 position.
    double static_fraction = 0.0;
    Rgb background{0, 0, 0};
    int keyframe_stride = 5;
    DegradationRanges degradation;

    double time_of(int frame) const {
        return n_frames > 1 ? static_cast<double>(frame) / (n_frames - 1) : 0.0;
    }

    bool is_static(std::size_t cluster) const {
        const auto n_static = static_cast<std::size_t>(
            std::lround(static_fraction * static_cast<double>(clusters.size())));
        return cluster < n_static;
    }

    Vec3 cluster_center(std::size_t cluster, double t) const {
        return clusters[cluster].path.at(is_static(cluster) ? 0.0 : t);
    }

    void validate() const {
        if (n_frames < 2) throw ArgumentError("scene: n_frames must be >= 2");
        if (!(static_fraction >= 0.0 && static_fraction <= 1.0))
            throw ArgumentError("scene: static_fraction must lie in [0,1]");
        if (camera_path.size() != static_cast<std::size_t>(n_frames))
            throw ArgumentError("scene: camera path needs one camera per frame");
        for (const auto& h : holdout)
            if (h.cameras.size() != static_cast<std::size_t>(n_frames))
                throw ArgumentError("scene: holdout camera '" + h.name + "' needs one camera per frame");
        if (keyframe_stride < 1 || keyframe_stride >= n_frames)
            throw ArgumentError("scene: keyframe_stride must lie in [1, n_frames)");
        for (const auto& c : clusters)
            if (!(c.radius > 0.0) || c.path.control.empty())
                throw ArgumentError("scene: cluster '" + c.name + "' needs a radius and a path");
        const auto& d = degradation;
        if (!(d.scale_lo > 0.0 && d.scale_hi >= d.scale_lo && d.gamma_lo > 0.0 &&
              d.gamma_hi >= d.gamma_lo && d.offset_hi >= d.offset_lo && d.noise_sigma >= 0.0))
            throw ArgumentError("scene: invalid degradation ranges");
    }
};

/// Per-frame depth degradation: d ↦ a·d, then a power γ on the depth normalized
/// to its own range (mapped back to that range), then + b, then Gaussian noise.
/// For σ = 0 the map is strictly increasing, so per-frame depth order survives.
struct DepthDegradation {
    std::vector<double> scale;
    std::vector<double> offset;
    std::vector<double> gamma;
    double noise_sigma = 0.0;

    static DepthDegradation identity(int n_frames) {
        const auto n = static_cast<std::size_t>(n_frames);
        return {std::vector<double>(n, 1.0), std::vector<double>(n, 0.0),
                std::vector<double>(n, 1.0), 0.0};
    }
};

/// Frame 0 is the metric reference: it keeps scale 1 and offset 0 and only
/// receives the gamma distortion and noise.
inline DepthDegradation sample_degradation(const DegradationRanges& r, int n_frames,
                                           std::uint64_t seed) {
    Rng rng = make_rng(seed, 0xDE6);
    DepthDegradation d;
    d.noise_sigma = r.noise_sigma;
    for (int f = 0; f < n_frames; ++f) {
        d.scale.push_back(std::exp(uniform(rng, std::log(r.scale_lo), std::log(r.scale_hi))));
        d.gamma.push_back(std::exp(uniform(rng, std::log(r.gamma_lo), std::log(r.gamma_hi))));
        d.offset.push_back(uniform(rng, r.offset_lo, r.offset_hi));
    }
    if (n_frames > 0) d.scale[0] = 1.0, d.offset[0] = 0.0;
    return d;
}

/// Smallest depth the degradation will emit on a valid pixel.
inline constexpr double kMinDegradedDepth = 1e-6;

inline DepthMap degrade(const DepthMap& depth, const DepthDegradation& deg, int frame,
                        std::uint64_t seed) {
    const auto f = static_cast<std::size_t>(frame);
    if (frame < 0 || f >= deg.scale.size() || f >= deg.gamma.size() || f >= deg.offset.size())
        throw ArgumentError("degrade: no parameters for frame " + std::to_string(frame));
    const double a = deg.scale[f], b = deg.offset[f], g = deg.gamma[f];
    if (!(a > 0.0) || !(g > 0.0)) throw ArgumentError("degrade: scale and gamma must be positive");

    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (double d : depth.data())
        if (d > 0.0) lo = std::min(lo, d), hi = std::max(hi, d);

    Rng rng = make_rng(seed, 0x5EED0000ull + f);
    DepthMap out(depth.width(), depth.height(), 0.0);
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const double d = depth[i];
        if (!(d > 0.0)) continue;
        double v = a * d;
        if (g != 1.0 && hi > lo) {
            const double n = (d - lo) / (hi - lo);
            v = a * (lo + std::pow(n, g) * (hi - lo));
        }
        v += b;
        if (deg.noise_sigma > 0.0) v += deg.noise_sigma * normal(rng);
        out[i] = std::max(v, kMinDegradedDepth);
    }
    return out;
}

struct RayHit {
    int object = -1;  // -1 nothing, 0 wall, k+1 cluster k
    double depth = 0.0;
    Vec3 world;
    Vec3 local;  // offset from the cluster center (world point for the wall)
    Vec3 center; // cluster center at the hit time
};

struct HoldoutView {
    std::string name;
    std::vector<FrameBundle> frames;
};

struct SyntheticScene {
    std::vector<FrameBundle> frames;  // training camera, ground-truth depth
    std::vector<FlowField> flows;     // ground-truth flow between key-frame pairs
    std::vector<HoldoutView> holdouts;
};

class SceneRenderer {
public:
    SceneRenderer(const SceneSpec& spec, std::uint64_t seed) : spec_(spec) {
        Rng rng = make_rng(seed, 0x7E47);
        for (std::size_t k = 0; k < spec.clusters.size() + 1; ++k)
            phases_.push_back({uniform(rng, 0.0, 6.283185307179586),
                               uniform(rng, 0.0, 6.283185307179586)});
        const Vec3 n = normalized(spec.wall.normal);
        const Vec3 helper = std::abs(n.y) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0};
        wall_u_ = normalized(cross(helper, n));
        wall_v_ = cross(n, wall_u_);
    }

    RayHit cast(const Camera& cam, const Vec2& pixel, double t) const {
        const Vec3 origin = cam.pose().translation;
        const Vec3 dir =
            cam.pose().rotation * Vec3{(pixel.x - cam.cx()) / cam.fx(), (pixel.y - cam.cy()) / cam.fy(), 1.0};
        // dir has unit camera-frame z, so the ray parameter is the depth
        RayHit best;
        best.depth = std::numeric_limits<double>::infinity();
        const Vec3 n = spec_.wall.normal;
        const double denom = dot(n, dir);
        if (std::abs(denom) > 1e-12) {
            const double lambda = dot(n, spec_.wall.point - origin) / denom;
            if (lambda > 1e-9) {
                best.object = 0;
                best.depth = lambda;
                best.world = origin + dir * lambda;
                best.local = best.world;
            }
        }
        for (std::size_t k = 0; k < spec_.clusters.size(); ++k) {
            const Vec3 c = spec_.cluster_center(k, t);
            const double r = spec_.clusters[k].radius;
            const Vec3 oc = origin - c;
            const double qa = dot(dir, dir), qb = dot(oc, dir), qc = dot(oc, oc) - r * r;
            const double disc = qb * qb - qa * qc;
            if (disc < 0.0) continue;
            const double sq = std::sqrt(disc);
            double lambda = (-qb - sq) / qa;
            if (lambda <= 1e-9) lambda = (-qb + sq) / qa;
            if (lambda <= 1e-9 || lambda >= best.depth) continue;
            best.object = static_cast<int>(k) + 1;
            best.depth = lambda;
            best.world = origin + dir * lambda;
            best.local = best.world - c;
            best.center = c;
        }
        if (best.object < 0) best.depth = 0.0;
        return best;
    }

    Rgb shade(const RayHit& hit) const {
        if (hit.object < 0) return spec_.background;
        const auto& ph = phases_[static_cast<std::size_t>(hit.object)];
        if (hit.object == 0) {
            const auto& w = spec_.wall;
            const Vec3 d = hit.world - w.point;
            const double k = 6.283185307179586 / w.period;
            const double s = 0.5 + 0.5 * std::sin(k * dot(d, wall_u_) + ph.first) *
                                       std::sin(k * dot(d, wall_v_) + ph.second);
            return w.color_a * (1.0 - s) + w.color_b * s;
        }
        const auto& c = spec_.clusters[static_cast<std::size_t>(hit.object - 1)];
        const Vec3 l = hit.local * (1.0 / c.radius);
        const double f = c.frequency * c.radius;
        const double s = 0.5 + 0.5 * std::sin(f * l.x + ph.first) * std::cos(f * l.y + ph.second) *
                                   std::cos(0.5 * f * l.z);
        return c.color_a * (1.0 - s) + c.color_b * s;
    }

    /// World position of the surface point `hit` at time t.
    Vec3 track(const RayHit& hit, double t) const {
        if (hit.object <= 0) return hit.world;
        const Vec3 c = spec_.cluster_center(static_cast<std::size_t>(hit.object - 1), t);
        if (c == hit.center) return hit.world;
        return c + hit.local;
    }

    FrameBundle render_frame(const Camera& cam, double t) const {
        FrameBundle fb;
        fb.t = t;
        fb.camera = cam;
        fb.image = Image(cam.width(), cam.height(), spec_.background);
        fb.depth = DepthMap(cam.width(), cam.height(), 0.0);
        fb.mask = Mask(cam.width(), cam.height(), 0);
        for (int y = 0; y < cam.height(); ++y)
            for (int x = 0; x < cam.width(); ++x) {
                const RayHit hit = cast(cam, {static_cast<double>(x), static_cast<double>(y)}, t);
                const std::size_t i = fb.depth.index(x, y);
                fb.image[i] = shade(hit);
                if (hit.object >= 0) {
                    fb.depth[i] = hit.depth;
                    fb.mask[i] = 1;
                }
            }
        return fb;
    }

    FlowField flow(int from, int to) const {
        const Camera& ci = spec_.camera_path[static_cast<std::size_t>(from)];
        const Camera& cj = spec_.camera_path[static_cast<std::size_t>(to)];
        const double ti = spec_.time_of(from), tj = spec_.time_of(to);
        FlowField ff{from, to, Flow2D(ci.width(), ci.height()), Mask(ci.width(), ci.height(), 0)};
        for (int y = 0; y < ci.height(); ++y)
            for (int x = 0; x < ci.width(); ++x) {
                const Vec2 p{static_cast<double>(x), static_cast<double>(y)};
                const RayHit hit = cast(ci, p, ti);
                if (hit.object < 0) continue;
                const Vec3 target = track(hit, tj);
                const Vec3 local_j = cj.view().apply(target);
                if (local_j.z <= 1e-9) continue;
                const Projection q = cj.project(target);
                const std::size_t idx = ff.flow.index(x, y);
                // same camera, unmoved point: exactly zero rather than round-trip noise
                ff.flow[idx] = (ci == cj && target == hit.world) ? Vec2{} : q.pixel - p;
                if (!cj.in_bounds(q.pixel)) continue;
                const RayHit seen = cast(cj, q.pixel, tj);
                ff.valid[idx] = seen.object == hit.object &&
                                std::abs(seen.depth - q.depth) <= 1e-7 * q.depth;
            }
        return ff;
    }

private:
    const SceneSpec& spec_;
    std::vector<std::pair<double, double>> phases_;
    Vec3 wall_u_, wall_v_;
};

/// Renders every frame for the training and holdout cameras plus exact flow
/// between key-frame pairs. Deterministic in (spec, seed).
inline SyntheticScene generate(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    for (int f = 0; f < spec.n_frames; ++f) {
        const Camera& cam = spec.camera_path[static_cast<std::size_t>(f)];
        for (std::size_t k = 0; k < spec.clusters.size(); ++k) {
            const Vec3 c = cam.view().apply(spec.cluster_center(k, spec.time_of(f)));
            const bool in_front = c.z > spec.clusters[k].radius;
            const bool visible =
                in_front && cam.in_bounds({cam.fx() * c.x / c.z + cam.cx(), cam.fy() * c.y / c.z + cam.cy()});
            if (!visible) {
                std::ostringstream os;
                os << "generate: cluster '" << spec.clusters[k].name << "' leaves the camera frustum at frame "
                   << f;
                throw GenerationError(os.str());
            }
        }
    }
    SceneRenderer renderer(spec, seed);
    SyntheticScene scene;
    for (int f = 0; f < spec.n_frames; ++f)
        scene.frames.push_back(renderer.render_frame(spec.camera_path[static_cast<std::size_t>(f)], spec.time_of(f)));
    for (auto [i, j] : keyframe_pairs(spec.n_frames, spec.keyframe_stride))
        scene.flows.push_back(renderer.flow(i, j));
    for (const auto& h : spec.holdout) {
        HoldoutView view{h.name, {}};
        for (int f = 0; f < spec.n_frames; ++f)
            view.frames.push_back(renderer.render_frame(h.cameras[static_cast<std::size_t>(f)], spec.time_of(f)));
        scene.holdouts.push_back(std::move(view));
    }
    return scene;
}

// JSON scene description -------------------------------------------------------

namespace detail {

inline Vec3 vec3_from(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw ArgumentError("scene config: expected a 3-vector");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline Rgb rgb_from(const nlohmann::json& j) {
    const Vec3 v = vec3_from(j);
    return {v.x, v.y, v.z};
}

inline std::pair<double, double> range_from(const nlohmann::json& j, const char* key, double dflt) {
    if (!j.contains(key)) return {dflt, dflt};
    const auto& r = j.at(key);
    if (r.is_number()) return {r.get<double>(), r.get<double>()};
    if (!r.is_array() || r.size() != 2) throw ArgumentError(std::string("scene config: '") + key + "' must be [lo, hi]");
    return {r[0].get<double>(), r[1].get<double>()};
}

}  // namespace detail

/// Builds a scene from its JSON description (see configs/basic.json).
inline SceneSpec scene_spec_from_json(const nlohmann::json& j) {
    try {
        SceneSpec s;
        const int width = j.value("width", 64);
        const int height = j.value("height", 64);
        s.n_frames = j.value("n_frames", 20);
        const double focal = j.value("focal", 60.0);
        const double cx = j.value("cx", 0.5 * (width - 1));
        const double cy = j.value("cy", 0.5 * (height - 1));
        const Camera base(focal, focal, cx, cy, width, height);

        const auto cam_cfg = j.value("camera", nlohmann::json::object());
        const Vec3 start = cam_cfg.contains("start") ? detail::vec3_from(cam_cfg["start"]) : Vec3{};
        const Vec3 end = cam_cfg.contains("end") ? detail::vec3_from(cam_cfg["end"]) : start;
        const Vec3 target =
            cam_cfg.contains("look_at") ? detail::vec3_from(cam_cfg["look_at"]) : Vec3{0, 0, 1};
        for (int f = 0; f < s.n_frames; ++f) {
            const double t = s.n_frames > 1 ? static_cast<double>(f) / (s.n_frames - 1) : 0.0;
            const Vec3 eye = start * (1.0 - t) + end * t;
            s.camera_path.push_back(base.with_pose(look_at(eye, target)));
        }
        for (const auto& h : j.value("holdout_cameras", nlohmann::json::array())) {
            NamedCameraPath path{h.at("name").get<std::string>(), {}};
            const Camera cam = base.with_pose(look_at(detail::vec3_from(h.at("eye")),
                                                      detail::vec3_from(h.at("look_at"))));
            path.cameras.assign(static_cast<std::size_t>(s.n_frames), cam);
            s.holdout.push_back(std::move(path));
        }
        if (j.contains("wall")) {
            const auto& w = j["wall"];
            s.wall.point = detail::vec3_from(w.at("point"));
            s.wall.normal = normalized(detail::vec3_from(w.at("normal")));
            if (w.contains("colors")) {
                s.wall.color_a = detail::rgb_from(w["colors"].at(0));
                s.wall.color_b = detail::rgb_from(w["colors"].at(1));
            }
            s.wall.period = w.value("period", s.wall.period);
        }
        for (const auto& c : j.value("clusters", nlohmann::json::array())) {
            Cluster cl;
            cl.name = c.value("name", "cluster" + std::to_string(s.clusters.size()));
            cl.radius = c.at("radius").get<double>();
            if (c.contains("colors")) {
                cl.color_a = detail::rgb_from(c["colors"].at(0));
                cl.color_b = detail::rgb_from(c["colors"].at(1));
            }
            cl.frequency = c.value("frequency", cl.frequency);
            for (const auto& p : c.at("path")) cl.path.control.push_back(detail::vec3_from(p));
            s.clusters.push_back(std::move(cl));
        }
        s.static_fraction = j.value("static_fraction", 0.0);
        if (j.contains("background_color")) s.background = detail::rgb_from(j["background_color"]);
        s.keyframe_stride = j.value("keyframe_stride", std::min(5, s.n_frames - 1));
        if (j.contains("degradation")) {
            const auto& d = j["degradation"];
            std::tie(s.degradation.scale_lo, s.degradation.scale_hi) = detail::range_from(d, "scale", 1.0);
            std::tie(s.degradation.offset_lo, s.degradation.offset_hi) = detail::range_from(d, "offset", 0.0);
            std::tie(s.degradation.gamma_lo, s.degradation.gamma_hi) = detail::range_from(d, "gamma", 1.0);
            s.degradation.noise_sigma = d.value("noise_sigma", 0.0);
        }
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("scene config: ") + e.what());
    }
}

}  // namespace modgs
