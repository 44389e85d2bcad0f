// SPDX-License-Identifier: Apache-2.0
//
// Two-stage optimization. Stage one fits the warp field to 3D flow lifted from
// scale-unified depth; Gaussians are then seeded by pulling every depth point
// back to canonical space. Stage two trains Gaussians and warp field jointly on
// photometric and depth-order losses.
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modgs/depth_align.hpp"
#include "modgs/errors.hpp"
#include "modgs/flow_lift.hpp"
#include "modgs/geometry.hpp"
#include "modgs/log.hpp"
#include "modgs/losses.hpp"
#include "modgs/optim.hpp"
#include "modgs/random.hpp"
#include "modgs/scene_io.hpp"
#include "modgs/splat.hpp"
#include "modgs/tensor_io.hpp"
#include "modgs/warpfield.hpp"

namespace modgs {

// Configuration ------------------------------------------------------------------

enum class DepthLossKind { ordinal, pearson, ranking, none };
enum class WarpInit { flow, kaiming };

inline const char* to_string(DepthLossKind k) {
    switch (k) {
        case DepthLossKind::ordinal: return "ordinal";
        case DepthLossKind::pearson: return "pearson";
        case DepthLossKind::ranking: return "ranking";
        case DepthLossKind::none: return "none";
    }
    return "?";
}

inline DepthLossKind depth_loss_kind_from(const std::string& s) {
    if (s == "ordinal") return DepthLossKind::ordinal;
    if (s == "pearson") return DepthLossKind::pearson;
    if (s == "ranking") return DepthLossKind::ranking;
    if (s == "none") return DepthLossKind::none;
    throw ArgumentError("unknown depth_loss '" + s + "' (ordinal, pearson, ranking, none)");
}

inline const char* to_string(WarpInit w) { return w == WarpInit::flow ? "flow" : "kaiming"; }

inline WarpInit warp_init_from(const std::string& s) {
    if (s == "flow") return WarpInit::flow;
    if (s == "kaiming") return WarpInit::kaiming;
    throw ArgumentError("unknown warp_init '" + s + "' (flow, kaiming)");
}

struct GaussianRates {
    ExpSchedule position{1.6e-4, 1.6e-6};  // times the scene extent, which is 1 after normalization
    double color = 2.5e-3;
    double opacity = 5e-2;
    double scale = 5e-3;
    double rotation = 1e-3;
};

/// Desk-scale defaults. At full scale the reference settings are 20000 steps
/// per stage, 100000 depth pairs per iteration and a 0.004 voxel.
struct TrainConfig {
    std::size_t init_steps = 2000;
    std::size_t joint_steps = 2000;
    std::size_t batch_pairs_3dflow = 512;
    std::size_t n_ordinal_pairs = 4096;
    ExpSchedule lr_warp_init{1e-3, 1e-4};
    ExpSchedule lr_warp_joint{1e-4, 1e-6};
    GaussianRates lr_gaussians;
    std::uint64_t seed = 0;
    LossWeights weights;
    double voxel = 0.02;
    double delta = 0.02;
    double alpha = 100.0;
    double static_threshold = 0.5;
    double depth_min_alpha = 0.5;  // rendered pixels below this coverage carry no depth loss
    std::size_t eval_pairs = 4096;
    WarpConfig warp;
    DepthLossKind depth_loss = DepthLossKind::ordinal;
    WarpInit warp_init = WarpInit::flow;

    void validate() const {
        if (batch_pairs_3dflow < 1 || n_ordinal_pairs < 1 || eval_pairs < 1)
            throw ArgumentError("config: pair counts must be >= 1");
        lr_warp_init.validate("config: lr_warp_init");
        lr_warp_joint.validate("config: lr_warp_joint");
        lr_gaussians.position.validate("config: lr_gaussians.position");
        const auto& g = lr_gaussians;
        if (!(g.color > 0) || !(g.opacity > 0) || !(g.scale > 0) || !(g.rotation > 0))
            throw ArgumentError("config: Gaussian learning rates must be positive");
        weights.validate();
        if (!(voxel > 0.0)) throw ArgumentError("config: voxel must be positive");
        if (!(delta >= 0.0 && delta < 1.0)) throw ArgumentError("config: delta must lie in [0,1)");
        if (!(alpha > 0.0)) throw ArgumentError("config: alpha must be positive");
        if (!(static_threshold >= 0.0)) throw ArgumentError("config: static_threshold must be >= 0");
        if (!(depth_min_alpha >= 0.0 && depth_min_alpha <= 1.0))
            throw ArgumentError("config: depth_min_alpha must lie in [0,1]");
        if (warp.blocks < 1 || warp.hidden < 1 || warp.time_freqs < 0 || !(warp.clamp > 0.0))
            throw ArgumentError("config: invalid warp architecture");
    }
};

inline nlohmann::json to_json(const TrainConfig& c) {
    const auto sched = [](const ExpSchedule& s) { return nlohmann::json{{"start", s.start}, {"end", s.end}}; };
    return {{"init_steps", c.init_steps},
            {"joint_steps", c.joint_steps},
            {"batch_pairs_3dflow", c.batch_pairs_3dflow},
            {"n_ordinal_pairs", c.n_ordinal_pairs},
            {"lr_warp_init", sched(c.lr_warp_init)},
            {"lr_warp_joint", sched(c.lr_warp_joint)},
            {"lr_gaussians",
             {{"position", sched(c.lr_gaussians.position)},
              {"color", c.lr_gaussians.color},
              {"opacity", c.lr_gaussians.opacity},
              {"scale", c.lr_gaussians.scale},
              {"rotation", c.lr_gaussians.rotation}}},
            {"seed", c.seed},
            {"weights", {{"ordinal", c.weights.ordinal}, {"render", c.weights.render}, {"dssim", c.weights.dssim}}},
            {"voxel", c.voxel},
            {"delta", c.delta},
            {"alpha", c.alpha},
            {"static_threshold", c.static_threshold},
            {"depth_min_alpha", c.depth_min_alpha},
            {"eval_pairs", c.eval_pairs},
            {"warp",
             {{"blocks", c.warp.blocks},
              {"hidden", c.warp.hidden},
              {"time_freqs", c.warp.time_freqs},
              {"clamp", c.warp.clamp}}},
            {"depth_loss", to_string(c.depth_loss)},
            {"warp_init", to_string(c.warp_init)}};
}

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known, const std::string& where) {
    if (!j.is_object()) throw ArgumentError("config: '" + where + "' must be an object");
    const std::set<std::string> names(known.begin(), known.end());
    for (const auto& [k, v] : j.items())
        if (!names.count(k)) throw ArgumentError("config: unknown key '" + where + k + "'");
}

template <class T>
void read_if(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

inline void read_schedule(const nlohmann::json& j, const char* key, ExpSchedule& s, const std::string& where) {
    if (!j.contains(key)) return;
    reject_unknown(j.at(key), {"start", "end"}, where + key + ".");
    read_if(j.at(key), "start", s.start);
    read_if(j.at(key), "end", s.end);
}

}  // namespace detail

/// Overlays the keys present in `j` on `base`; unknown keys are rejected.
inline TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c = {}) {
    using detail::read_if;
    try {
        detail::reject_unknown(j,
                               {"init_steps", "joint_steps", "batch_pairs_3dflow", "n_ordinal_pairs", "lr_warp_init",
                                "lr_warp_joint", "lr_gaussians", "seed", "weights", "voxel", "delta", "alpha",
                                "static_threshold", "depth_min_alpha", "eval_pairs", "warp", "depth_loss",
                                "warp_init", "comment"},
                               "");
        read_if(j, "init_steps", c.init_steps);
        read_if(j, "joint_steps", c.joint_steps);
        read_if(j, "batch_pairs_3dflow", c.batch_pairs_3dflow);
        read_if(j, "n_ordinal_pairs", c.n_ordinal_pairs);
        detail::read_schedule(j, "lr_warp_init", c.lr_warp_init, "");
        detail::read_schedule(j, "lr_warp_joint", c.lr_warp_joint, "");
        if (j.contains("lr_gaussians")) {
            const auto& g = j["lr_gaussians"];
            detail::reject_unknown(g, {"position", "color", "opacity", "scale", "rotation"}, "lr_gaussians.");
            detail::read_schedule(g, "position", c.lr_gaussians.position, "lr_gaussians.");
            read_if(g, "color", c.lr_gaussians.color);
            read_if(g, "opacity", c.lr_gaussians.opacity);
            read_if(g, "scale", c.lr_gaussians.scale);
            read_if(g, "rotation", c.lr_gaussians.rotation);
        }
        read_if(j, "seed", c.seed);
        if (j.contains("weights")) {
            const auto& w = j["weights"];
            detail::reject_unknown(w, {"ordinal", "render", "dssim"}, "weights.");
            read_if(w, "ordinal", c.weights.ordinal);
            read_if(w, "render", c.weights.render);
            read_if(w, "dssim", c.weights.dssim);
        }
        read_if(j, "voxel", c.voxel);
        read_if(j, "delta", c.delta);
        read_if(j, "alpha", c.alpha);
        read_if(j, "static_threshold", c.static_threshold);
        read_if(j, "depth_min_alpha", c.depth_min_alpha);
        read_if(j, "eval_pairs", c.eval_pairs);
        if (j.contains("warp")) {
            const auto& w = j["warp"];
            detail::reject_unknown(w, {"blocks", "hidden", "time_freqs", "clamp"}, "warp.");
            read_if(w, "blocks", c.warp.blocks);
            read_if(w, "hidden", c.warp.hidden);
            read_if(w, "time_freqs", c.warp.time_freqs);
            read_if(w, "clamp", c.warp.clamp);
        }
        if (j.contains("depth_loss")) c.depth_loss = depth_loss_kind_from(j["depth_loss"].get<std::string>());
        if (j.contains("warp_init")) c.warp_init = warp_init_from(j["warp_init"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw ArgumentError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

// Scene preparation -------------------------------------------------------------

/// Uniform similarity p ↦ (p − center)·scale taking the scene into [−1,1]³.
struct SceneNormalization {
    Vec3 center;
    double scale = 1.0;

    Vec3 apply(const Vec3& p) const { return (p - center) * scale; }
    Vec3 invert(const Vec3& p) const { return p * (1.0 / scale) + center; }
    Camera apply(const Camera& cam) const {
        return cam.with_pose({cam.pose().rotation, apply(cam.pose().translation)});
    }

    friend bool operator==(const SceneNormalization&, const SceneNormalization&) = default;
};

inline SceneNormalization compute_normalization(std::span<const FrameBundle> frames) {
    Vec3 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity(),
            std::numeric_limits<double>::infinity()};
    Vec3 hi = lo * -1.0;
    std::size_t n = 0;
    for (const auto& fr : frames)
        for (int y = 0; y < fr.depth.height(); ++y)
            for (int x = 0; x < fr.depth.width(); ++x) {
                const std::size_t i = fr.depth.index(x, y);
                if (!fr.mask[i]) continue;
                const Vec3 p = fr.camera.unproject({static_cast<double>(x), static_cast<double>(y)}, fr.depth[i]);
                for (std::size_t k = 0; k < 3; ++k) lo[k] = std::min(lo[k], p[k]), hi[k] = std::max(hi[k], p[k]);
                ++n;
            }
    if (n == 0) throw InitializationError("normalization: no valid depth points");
    const Vec3 half = (hi - lo) * 0.5;
    const double extent = std::max({half.x, half.y, half.z});
    if (!(extent > 0.0)) throw DegenerateError("normalization: all depth points coincide");
    return {(lo + hi) * 0.5, 1.0 / extent};
}

inline FrameBundle normalize_frame(const FrameBundle& fr, const SceneNormalization& norm) {
    FrameBundle out = fr;
    out.camera = norm.apply(fr.camera);
    for (std::size_t i = 0; i < out.depth.size(); ++i)
        if (out.mask[i]) out.depth[i] *= norm.scale;
    return out;
}

/// Training inputs after scale unification and normalization.
struct PreparedScene {
    std::vector<FrameBundle> frames;
    SceneFlow3D flows;
    std::vector<FrameScale> scales;
    StaticMask statics;
    SceneNormalization norm;
};

inline PreparedScene prepare_scene(const SceneData& scene, const TrainConfig& cfg) {
    PreparedScene p;
    if (scene.flows.empty()) throw ArgumentError("prepare_scene: scene has no flow fields");
    p.statics = static_mask(std::span<const FlowField>(scene.flows), cfg.static_threshold);
    p.scales = solve_scales(scene.frames, p.statics);
    const auto rectified = rectify(scene.frames, p.scales);
    p.norm = compute_normalization(rectified);
    for (const auto& fr : rectified) p.frames.push_back(normalize_frame(fr, p.norm));
    for (const auto& fl : scene.flows) {
        const auto from = static_cast<std::size_t>(fl.from), to = static_cast<std::size_t>(fl.to);
        if (from >= p.frames.size() || to >= p.frames.size())
            throw ArgumentError("prepare_scene: flow references a missing frame");
        p.flows.append(lift(p.frames[from], p.frames[to], fl.flow, &fl.valid));
    }
    if (p.flows.empty()) throw InitializationError("prepare_scene: lifting produced no 3D flow pairs");
    return p;
}

// Logging ---------------------------------------------------------------------

struct LogRow {
    std::string stage;
    std::size_t iteration = 0;
    int frame = -1;
    double init = 0.0, render = 0.0, depth = 0.0, total = 0.0;

    friend bool operator==(const LogRow&, const LogRow&) = default;
};

struct TrainLog {
    std::vector<LogRow> rows;

    void write_csv(std::ostream& os) const {
        os << "stage,iteration,frame,init_loss,render_loss,depth_loss,total_loss\n";
        os.precision(17);
        for (const auto& r : rows)
            os << r.stage << ',' << r.iteration << ',' << r.frame << ',' << r.init << ',' << r.render << ','
               << r.depth << ',' << r.total << '\n';
    }

    void write_csv(const std::filesystem::path& path) const {
        std::ofstream os(path);
        if (!os) throw FormatError("cannot write '" + path.string() + "'");
        write_csv(os);
    }

    /// Mean of `total` over the first / last `window` rows of a stage.
    std::pair<double, double> smoothed_ends(const std::string& stage, std::size_t window) const {
        std::vector<double> v;
        for (const auto& r : rows)
            if (r.stage == stage) v.push_back(r.total);
        if (v.empty()) throw ArgumentError("train log has no rows for stage '" + stage + "'");
        const std::size_t w = std::min(window, v.size());
        double a = 0.0, b = 0.0;
        for (std::size_t i = 0; i < w; ++i) a += v[i], b += v[v.size() - 1 - i];
        return {a / static_cast<double>(w), b / static_cast<double>(w)};
    }

    friend bool operator==(const TrainLog&, const TrainLog&) = default;
};

inline void check_finite(double v, const char* stage, std::size_t step) {
    if (!std::isfinite(v))
        throw TrainingError(std::string(stage) + ": loss became non-finite at step " + std::to_string(step));
}

// Stage one -----------------------------------------------------------------------

struct InitReport {
    double initial_loss = 0.0;  // over the evaluation subset
    double final_loss = 0.0;
};

/// Fits the warp field to 3D flow pairs with minibatch Adam.
inline InitReport train_init_stage(const SceneFlow3D& flows, WarpField& field, const TrainConfig& cfg,
                                   TrainLog* log_out = nullptr) {
    if (flows.empty()) throw ArgumentError("train_init_stage: no 3D flow pairs");
    Rng rng = make_rng(cfg.seed, 0x1417);
    // fixed evaluation subset for the before/after comparison
    std::vector<FlowPair3D> eval_set;
    {
        Rng er = make_rng(cfg.seed, 0x1418);
        const std::size_t n_eval = std::min<std::size_t>(flows.size(), 4096);
        if (n_eval == flows.size()) eval_set = flows.pairs;
        else
            for (std::size_t k = 0; k < n_eval; ++k) eval_set.push_back(flows.pairs[uniform_index(er, flows.size())]);
    }
    InitReport rep;
    rep.initial_loss = field.init_loss(eval_set);
    check_finite(rep.initial_loss, "init", 0);

    AdamState state(field.num_params());
    std::vector<double> grad(field.num_params());
    std::vector<FlowPair3D> batch(std::min(cfg.batch_pairs_3dflow, flows.size()));
    for (std::size_t step = 0; step < cfg.init_steps; ++step) {
        for (auto& b : batch) b = flows.pairs[uniform_index(rng, flows.size())];
        std::fill(grad.begin(), grad.end(), 0.0);
        const double loss = field.init_loss_and_grad(batch, grad);
        check_finite(loss, "init", step);
        adam_step(field.params(), grad, state, cfg.lr_warp_init.at(step, cfg.init_steps));
        if (log_out) log_out->rows.push_back({"init", step, -1, loss, 0.0, 0.0, loss});
        if (log_enabled(LogLevel::debug) && step % 100 == 0)
            log(LogLevel::debug, "init step " + std::to_string(step) + " loss " + std::to_string(loss));
    }
    rep.final_loss = field.init_loss(eval_set);
    check_finite(rep.final_loss, "init", cfg.init_steps);
    return rep;
}

// Stage two -----------------------------------------------------------------------

struct DepthTerm {
    double value = 0.0;
    DepthMap grad;  // d(term)/d(rendered depth), empty when the term was skipped
};

/// Depth supervision of one rendered frame against its input depth.
inline DepthTerm depth_term(const RenderOutput& r, const FrameBundle& frame, const TrainConfig& cfg,
                            std::uint64_t pair_seed) {
    DepthTerm out;
    if (cfg.depth_loss == DepthLossKind::none) return out;
    Mask valid(frame.mask.width(), frame.mask.height(), 0);
    for (std::size_t i = 0; i < valid.size(); ++i)
        valid[i] = frame.mask[i] && r.alpha[i] >= cfg.depth_min_alpha && r.alpha[i] >= 1e-4;
    try {
        if (cfg.depth_loss == DepthLossKind::pearson) {
            auto l = pearson_loss(r.depth, frame.depth, valid);
            return {l.value, std::move(l.grad)};
        }
        const Normalized n = minmax_normalize(r.depth, valid);
        const PairSample sample = sample_pairs(frame.depth, valid, cfg.n_ordinal_pairs, cfg.delta, pair_seed);
        const DepthLoss l = cfg.depth_loss == DepthLossKind::ordinal ? ordinal_loss(n.values, sample, cfg.alpha)
                                                                     : ranking_loss(n.values, sample);
        return {l.value, minmax_normalize_backward(n, valid, l.grad)};
    } catch (const DataError& e) {
        // too little coverage early in training; the photometric term still applies
        log(LogLevel::debug, std::string("depth term skipped: ") + e.what());
        return {};
    }
}

/// Adam state for every trainable group.
struct JointOptimizer {
    AdamState position, log_scale, rotation, opacity, color, warp;

    JointOptimizer(std::size_t n_gaussians, std::size_t n_warp)
        : position(3 * n_gaussians), log_scale(3 * n_gaussians), rotation(4 * n_gaussians),
          opacity(n_gaussians), color(3 * n_gaussians), warp(n_warp) {}
};

inline void train_joint_stage(std::span<const FrameBundle> frames, GaussianSet& gaussians, WarpField& field,
                              const Rgb& background, const TrainConfig& cfg, TrainLog* log_out = nullptr) {
    if (cfg.joint_steps == 0) return;
    if (frames.empty()) throw ArgumentError("train_joint_stage: no frames");
    if (gaussians.empty()) throw ArgumentError("train_joint_stage: no Gaussians");
    Rng rng = make_rng(cfg.seed, 0x7017);
    JointOptimizer opt(gaussians.size(), field.num_params());
    const auto& rates = cfg.lr_gaussians;
    std::vector<double> warp_grad(field.num_params());
    std::vector<Vec3> canon_grad(gaussians.size());

    for (std::size_t step = 0; step < cfg.joint_steps; ++step) {
        const std::size_t f = uniform_index(rng, frames.size());
        const FrameBundle& frame = frames[f];
        WarpField::Tape warp_tape;
        const GaussianSet posed = deform(gaussians, field, frame.t, &warp_tape);
        RenderTape tape;
        const RenderOutput r = render(posed, frame.camera, background, {}, &tape);

        const ImageLoss photo = render_loss(r.image, frame.image, cfg.weights.dssim);
        const DepthTerm dterm = depth_term(r, frame, cfg, mix_seed(cfg.seed, 0xD00000000ull + step));
        const double total = total_loss(cfg.weights, dterm.value, photo.value);
        check_finite(total, "joint", step);

        RenderGradInput gin;
        gin.d_image = photo.grad;
        for (auto& g : gin.d_image.data()) g *= cfg.weights.render;
        if (!dterm.grad.empty() && cfg.weights.ordinal > 0.0) {
            gin.d_depth = dterm.grad;
            for (auto& g : gin.d_depth.data()) g *= cfg.weights.ordinal;
        }
        GaussianGrads g = render_backward(posed, frame.camera, background, r, tape, gin);

        std::fill(warp_grad.begin(), warp_grad.end(), 0.0);
        field.forward_backward(warp_tape, g.position, canon_grad, warp_grad);

        adam_step(as_doubles(gaussians.position), as_doubles(canon_grad), opt.position,
                  rates.position.at(step, cfg.joint_steps));
        adam_step(as_doubles(gaussians.log_scale), as_doubles(g.log_scale), opt.log_scale, rates.scale);
        adam_step(as_doubles(gaussians.rotation), as_doubles(g.rotation), opt.rotation, rates.rotation);
        adam_step(gaussians.opacity_logit, g.opacity_logit, opt.opacity, rates.opacity);
        adam_step(as_doubles(gaussians.color), as_doubles(g.color), opt.color, rates.color);
        adam_step(field.params(), warp_grad, opt.warp, cfg.lr_warp_joint.at(step, cfg.joint_steps));
        gaussians.sanitize();

        if (log_out) log_out->rows.push_back({"joint", step, static_cast<int>(f), 0.0, photo.value, dterm.value, total});
        if (log_enabled(LogLevel::debug) && step % 100 == 0)
            log(LogLevel::debug, "joint step " + std::to_string(step) + " render " + std::to_string(photo.value) +
                                     " depth " + std::to_string(dterm.value));
    }
}

// Model ---------------------------------------------------------------------------

struct Model {
    WarpField field;
    GaussianSet gaussians;
    SceneNormalization norm;
    Rgb background;
};

struct TrainResult {
    Model model;
    InitReport init;
    std::vector<FrameScale> scales;
};

/// The full pipeline on one scene.
inline TrainResult train(const SceneData& scene, const TrainConfig& cfg, TrainLog* log_out = nullptr) {
    cfg.validate();
    const PreparedScene prep = prepare_scene(scene, cfg);
    TrainResult res{Model{WarpField(cfg.warp), {}, prep.norm, scene.background}, {}, prep.scales};
    Model& m = res.model;
    if (cfg.warp_init == WarpInit::flow) {
        m.field = WarpField::near_identity(cfg.warp, cfg.seed);
        res.init = train_init_stage(prep.flows, m.field, cfg, log_out);
    } else {
        m.field = WarpField::kaiming(cfg.warp, cfg.seed);
    }
    m.gaussians = init_gaussians(prep.frames, m.field, cfg.voxel);
    log(LogLevel::info, "initialized " + std::to_string(m.gaussians.size()) + " Gaussians from " +
                            std::to_string(prep.flows.size()) + " 3D flow pairs");
    train_joint_stage(prep.frames, m.gaussians, m.field, m.background, cfg, log_out);
    return res;
}

/// Renders the model from a camera given in original scene units; depth is
/// returned in those units too.
inline RenderOutput render_view(const Model& m, const Camera& camera, double t) {
    const GaussianSet posed = deform(m.gaussians, m.field, t);
    RenderOutput r = render(posed, m.norm.apply(camera), m.background);
    const RenderSettings rs;
    for (std::size_t i = 0; i < r.depth.size(); ++i)
        if (r.alpha[i] >= rs.alpha_eps) r.depth[i] /= m.norm.scale;
    return r;
}

// Evaluation ----------------------------------------------------------------------

inline constexpr double kPsnrCap = 99.0;

inline double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw ArgumentError("psnr: image sizes differ");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const Rgb d = a[i] - b[i];
        se += dot(d, d);
    }
    const double mse = se / (3.0 * static_cast<double>(a.size()));
    if (mse == 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

struct DepthCorrespondence {
    int x = 0, y = 0;
    double depth = 0.0;  // reference depth
};

/// s minimizing Σ (s·rendered(u) − reference)².
inline double align_render_scale(const DepthMap& rendered, std::span<const DepthCorrespondence> refs) {
    if (refs.empty()) throw ArgumentError("align_render_scale: no correspondences");
    double num = 0.0, den = 0.0;
    for (const auto& c : refs) {
        const double d = rendered(c.x, c.y);
        num += d * c.depth;
        den += d * d;
    }
    if (!(den > 0.0)) throw DegenerateError("align_render_scale: all rendered depths are zero");
    return num / den;
}

struct EvalReport {
    std::vector<double> psnr, ssim;
    double mean_psnr = 0.0, mean_ssim = 0.0;
    double depth_order_agreement = 0.0;
    double render_scale = 0.0;

    friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline nlohmann::json to_json(const EvalReport& r) {
    return {{"psnr", r.psnr},
            {"ssim", r.ssim},
            {"mean_psnr", r.mean_psnr},
            {"mean_ssim", r.mean_ssim},
            {"depth_order_agreement", r.depth_order_agreement},
            {"render_scale", r.render_scale}};
}

/// Scores renders against ground-truth frames (image + true depth + mask).
inline EvalReport evaluate(const Model& m, std::span<const FrameBundle> gt, std::size_t n_pairs,
                           std::uint64_t seed) {
    if (gt.empty()) throw ArgumentError("evaluate: no frames");
    EvalReport rep;
    std::size_t agree_num = 0, agree_den = 0;
    std::vector<DepthCorrespondence> corr;
    std::vector<double> rendered_at;
    double num = 0.0, den = 0.0;
    for (std::size_t f = 0; f < gt.size(); ++f) {
        const auto& fr = gt[f];
        const RenderOutput r = render_view(m, fr.camera, fr.t);
        rep.psnr.push_back(psnr(r.image, fr.image));
        rep.ssim.push_back(ssim(r.image, fr.image));
        for (std::size_t i = 0; i < fr.depth.size(); ++i)
            if (fr.mask[i]) num += r.depth[i] * fr.depth[i], den += r.depth[i] * r.depth[i];
        try {
            const PairSample s = sample_pairs(fr.depth, fr.mask, n_pairs, 0.0, mix_seed(seed, f));
            const double a = depth_order_agreement(r.depth, s);
            agree_num += static_cast<std::size_t>(std::llround(a * static_cast<double>(s.size())));
            agree_den += s.size();
        } catch (const SamplingError&) {
        }
    }
    for (double v : rep.psnr) rep.mean_psnr += v;
    for (double v : rep.ssim) rep.mean_ssim += v;
    rep.mean_psnr /= static_cast<double>(gt.size());
    rep.mean_ssim /= static_cast<double>(gt.size());
    rep.depth_order_agreement = agree_den ? static_cast<double>(agree_num) / static_cast<double>(agree_den) : 0.0;
    rep.render_scale = den > 0.0 ? num / den : 0.0;
    return rep;
}

/// Order agreement with true depth, on the same sampled pairs, of the rendered
/// depth and of the degraded input depth (training camera).
struct DistillationReport {
    double rendered = 0.0;
    double input = 0.0;
    std::size_t pairs = 0;
};

inline DistillationReport depth_distillation(const Model& m, const SceneData& scene, std::size_t n_pairs,
                                             std::uint64_t seed) {
    DistillationReport rep;
    std::size_t r_ok = 0, i_ok = 0;
    for (std::size_t f = 0; f < scene.frames.size(); ++f) {
        const auto& fr = scene.frames[f];
        const RenderOutput r = render_view(m, fr.camera, fr.t);
        PairSample s;
        try {
            s = sample_pairs(scene.depth_gt[f], fr.mask, n_pairs, 0.0, mix_seed(seed, 0xA000 + f));
        } catch (const SamplingError&) {
            continue;
        }
        r_ok += static_cast<std::size_t>(std::llround(depth_order_agreement(r.depth, s) * static_cast<double>(s.size())));
        i_ok += static_cast<std::size_t>(std::llround(depth_order_agreement(fr.depth, s) * static_cast<double>(s.size())));
        rep.pairs += s.size();
    }
    if (rep.pairs == 0) throw SamplingError("depth_distillation: no pairs could be sampled");
    rep.rendered = static_cast<double>(r_ok) / static_cast<double>(rep.pairs);
    rep.input = static_cast<double>(i_ok) / static_cast<double>(rep.pairs);
    return rep;
}

// Checkpoints ---------------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "MODGS-CKPT v1";

namespace detail {

template <class T>
Tensor f64_tensor(const std::vector<T>& v, std::size_t cols) {
    const auto d = as_doubles(v);
    Tensor t;
    t.shape = {v.size(), cols};
    t.data = std::vector<double>(d.begin(), d.end());
    return t;
}

template <class T>
std::vector<T> from_f64_tensor(const Tensor& t, std::size_t cols, const char* name) {
    if (t.dtype() != DType::f64 || t.shape.size() != 2 || t.shape[1] != cols)
        throw FormatError(std::string("checkpoint: tensor '") + name + "' has the wrong layout");
    std::vector<T> out(t.shape[0]);
    const auto& src = std::get<std::vector<double>>(t.data);
    auto dst = as_doubles(out);
    std::copy(src.begin(), src.end(), dst.begin());
    return out;
}

}  // namespace detail

/// Header line, one-line JSON index, then the MDT tensors in index order.
/// Written to a temporary file and renamed into place.
inline void save_checkpoint(const std::filesystem::path& path, const Model& m, const nlohmann::json& extra = {}) {
    const auto& g = m.gaussians;
    const std::vector<std::pair<std::string, Tensor>> tensors = {
        {"warp.params", detail::f64_tensor(std::vector<double>(m.field.params().begin(), m.field.params().end()), 1)},
        {"gaussians.position", detail::f64_tensor(g.position, 3)},
        {"gaussians.log_scale", detail::f64_tensor(g.log_scale, 3)},
        {"gaussians.rotation", detail::f64_tensor(g.rotation, 4)},
        {"gaussians.opacity_logit", detail::f64_tensor(g.opacity_logit, 1)},
        {"gaussians.color", detail::f64_tensor(g.color, 3)},
    };
    const auto& wc = m.field.config();
    nlohmann::json index{{"warp", {{"blocks", wc.blocks}, {"hidden", wc.hidden}, {"time_freqs", wc.time_freqs}, {"clamp", wc.clamp}}},
                         {"normalization",
                          {{"center", {m.norm.center.x, m.norm.center.y, m.norm.center.z}}, {"scale", m.norm.scale}}},
                         {"background", rgb_to_json(m.background)},
                         {"tensors", nlohmann::json::array()},
                         {"extra", extra}};
    for (const auto& [name, t] : tensors) index["tensors"].push_back(name);

    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw FormatError("cannot write checkpoint '" + tmp.string() + "'");
        os << kCheckpointMagic << '\n' << index.dump() << '\n';
        for (const auto& [name, t] : tensors) write_mdt(os, t);
        if (!os) throw FormatError("failed writing checkpoint '" + tmp.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

struct LoadedCheckpoint {
    Model model;
    nlohmann::json extra;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint '" + path.string() + "'");
    std::string magic, index_line;
    std::getline(is, magic);
    if (magic != kCheckpointMagic) throw FormatError("'" + path.string() + "' is not a MODGS-CKPT v1 file");
    std::getline(is, index_line);
    try {
        const auto index = nlohmann::json::parse(index_line);
        const auto& w = index.at("warp");
        WarpConfig wc{w.at("blocks").get<int>(), w.at("hidden").get<int>(), w.at("time_freqs").get<int>(),
                      w.at("clamp").get<double>()};
        LoadedCheckpoint out{Model{WarpField(wc), {}, {}, rgb_from_json(index.at("background"))}, index.value("extra", nlohmann::json{})};
        const auto c = index.at("normalization").at("center").get<std::vector<double>>();
        if (c.size() != 3) throw FormatError("checkpoint: normalization center needs 3 values");
        out.model.norm = {{c[0], c[1], c[2]}, index.at("normalization").at("scale").get<double>()};
        auto& g = out.model.gaussians;
        for (const auto& name_j : index.at("tensors")) {
            const auto name = name_j.get<std::string>();
            const Tensor t = read_mdt(is);
            if (name == "warp.params") {
                const auto p = detail::from_f64_tensor<double>(t, 1, "warp.params");
                if (p.size() != out.model.field.num_params())
                    throw FormatError("checkpoint: warp parameter count does not match its architecture");
                std::copy(p.begin(), p.end(), out.model.field.params().begin());
            } else if (name == "gaussians.position") g.position = detail::from_f64_tensor<Vec3>(t, 3, "position");
            else if (name == "gaussians.log_scale") g.log_scale = detail::from_f64_tensor<Vec3>(t, 3, "log_scale");
            else if (name == "gaussians.rotation") g.rotation = detail::from_f64_tensor<Quat>(t, 4, "rotation");
            else if (name == "gaussians.opacity_logit") g.opacity_logit = detail::from_f64_tensor<double>(t, 1, "opacity");
            else if (name == "gaussians.color") g.color = detail::from_f64_tensor<Rgb>(t, 3, "color");
            else throw FormatError("checkpoint: unknown tensor '" + name + "'");
        }
        const std::size_t n = g.position.size();
        if (g.log_scale.size() != n || g.rotation.size() != n || g.opacity_logit.size() != n || g.color.size() != n)
            throw FormatError("checkpoint: Gaussian attribute counts differ");
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint '" + path.string() + "': " + e.what());
    }
}

}  // namespace modgs
