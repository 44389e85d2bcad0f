// SPDX-License-Identifier: Apache-2.0
//
// modgs: every pipeline stage as a subcommand.
//
// Exit codes: 0 success, 1 usage error, 2 data or validation error, 3 training
// error or a failed self-check.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "modgs/depth_align.hpp"
#include "modgs/flow_lift.hpp"
#include "modgs/log.hpp"
#include "modgs/pipeline.hpp"
#include "modgs/scene_io.hpp"
#include "modgs/splat.hpp"
#include "modgs/synth.hpp"
#include "modgs/tensor_io.hpp"
#include "selfcheck.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    int threads = 1;
    bool deterministic = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required, const char* config_help) {
    auto* opt = cmd->add_option("--config", c.config, config_help);
    if (config_required) opt->required()->check(CLI::ExistingFile);
    else opt->check(CLI::ExistingFile);
    cmd->add_option("--out", c.out, "Output path");
    cmd->add_option("--seed", c.seed, "Seed for every stochastic stage (default 0)");
    cmd->add_option("--threads", c.threads, "Worker threads; computation is serial, so any value gives identical results")
        ->check(CLI::PositiveNumber);
    cmd->add_flag("--deterministic", c.deterministic, "Request bit-reproducible execution (always the case)");
}

json read_json(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw modgs::FormatError("cannot open '" + path + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw modgs::FormatError("'" + path + "': " + e.what());
    }
}

void write_json(const fs::path& path, const json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw modgs::FormatError("cannot write '" + path.string() + "'");
    os << j.dump(2) << '\n';
}

std::string require_out(const Common& c, const char* cmd) {
    if (c.out.empty()) throw CLI::RequiredError(std::string(cmd) + ": --out");
    return c.out;
}

/// Config file (if any) overlaid on defaults, then CLI overrides.
modgs::TrainConfig resolve_train_config(const Common& c) {
    modgs::TrainConfig cfg;
    if (!c.config.empty()) {
        try {
            cfg = modgs::train_config_from_json(read_json(c.config));
        } catch (const modgs::ArgumentError& e) {
            throw modgs::ArgumentError(c.config + ": " + e.what());
        }
    }
    if (c.seed) cfg.seed = *c.seed;
    return cfg;
}

json run_info(const Common& c, const std::string& scene) {
    return {{"scene", scene}, {"threads", c.threads}, {"deterministic", c.deterministic}};
}

std::vector<modgs::FrameScale> read_scales(const std::string& path, std::size_t n_frames) {
    const json j = read_json(path);
    std::vector<modgs::FrameScale> out(n_frames);
    for (std::size_t f = 0; f < n_frames; ++f) {
        const auto key = std::to_string(f);
        if (!j.contains("scales") || !j["scales"].contains(key))
            throw modgs::FormatError("'" + path + "' has no scale for frame " + key);
        out[f].s = j["scales"][key].get<double>();
    }
    return out;
}

const std::vector<modgs::FrameBundle>& view_frames(const modgs::SceneData& scene, const std::string& name,
                                                   std::vector<modgs::FrameBundle>& storage) {
    if (name == "train") {
        storage = scene.frames;
        for (std::size_t f = 0; f < storage.size(); ++f) storage[f].depth = scene.depth_gt[f];
        return storage;
    }
    for (const auto& h : scene.holdouts)
        if (h.name == name) return h.frames;
    throw modgs::ArgumentError("scene has no camera named '" + name + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic Gaussian reconstruction from monocular video (synthetic desk scale)"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    Common synth_c, align_c, lift_c, initw_c, initg_c, train_c, render_c, eval_c, verify_c;
    std::string scene_dir, scales_path, warp_ckpt, run_dir, camera_name = "train", holdout = "cam1";
    std::optional<double> threshold;
    std::optional<int> stride;
    std::optional<std::string> depth_loss, warp_init;
    std::optional<std::size_t> init_steps, joint_steps;
    int frame = 0;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic scene directory");
    add_common(synth, synth_c, true, "Scene description JSON");

    auto* align = app.add_subcommand("align-depth", "Solve per-frame depth scales against frame 0");
    add_common(align, align_c, false, "Training config JSON (static_threshold)");
    align->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
    align->add_option("--threshold", threshold, "Static flow threshold in pixels (default 0.5)");

    auto* liftc = app.add_subcommand("lift-flow", "Lift key-frame flows to 3D correspondences");
    add_common(liftc, lift_c, false, "Unused; accepted for uniformity");
    liftc->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
    liftc->add_option("--scales", scales_path, "scales.json from align-depth")->required()->check(CLI::ExistingFile);
    liftc->add_option("--stride", stride, "Key-frame stride (default: the scene's)");

    auto* initw = app.add_subcommand("init-warp", "Fit the warp field to lifted 3D flow");
    add_common(initw, initw_c, false, "Training config JSON");
    initw->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);

    auto* initg = app.add_subcommand("init-gaussians", "Seed canonical Gaussians through an initialized warp field");
    add_common(initg, initg_c, false, "Training config JSON (voxel)");
    initg->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
    initg->add_option("--warp", warp_ckpt, "Checkpoint written by init-warp")->required()->check(CLI::ExistingFile);

    auto* trainc = app.add_subcommand("train", "Run both training stages");
    add_common(trainc, train_c, false, "Training config JSON");
    trainc->add_option("--scene", scene_dir, "Scene directory")->required()->check(CLI::ExistingDirectory);
    trainc->add_option("--depth-loss", depth_loss, "Override: ordinal, pearson, ranking or none");
    trainc->add_option("--warp-init", warp_init, "Override: flow or kaiming");
    trainc->add_option("--init-steps", init_steps, "Override the warp initialization step count");
    trainc->add_option("--joint-steps", joint_steps, "Override the joint training step count");

    auto* renderc = app.add_subcommand("render", "Render a trained model (PPM image, PGM depth)");
    add_common(renderc, render_c, false, "Unused; accepted for uniformity");
    renderc->add_option("--run", run_dir, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
    renderc->add_option("--camera", camera_name, "'train' or a holdout camera name");
    renderc->add_option("--frame", frame, "Frame index");

    auto* evalc = app.add_subcommand("eval", "Evaluate a trained model on held-out views");
    add_common(evalc, eval_c, false, "Unused; accepted for uniformity");
    evalc->add_option("--run", run_dir, "Run directory written by train")->required()->check(CLI::ExistingDirectory);
    evalc->add_option("--holdout", holdout, "Holdout camera name, or 'train'");

    auto* verify = app.add_subcommand("verify", "Run the built-in property checks");
    add_common(verify, verify_c, false, "Unused; accepted for uniformity");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (synth->parsed()) {
            const auto out = require_out(synth_c, "synth");
            const auto spec = [&] {
                try {
                    return modgs::scene_spec_from_json(read_json(synth_c.config));
                } catch (const modgs::ArgumentError& e) {
                    throw modgs::ArgumentError(synth_c.config + ": " + e.what());
                }
            }();
            const std::uint64_t seed = synth_c.seed.value_or(0);
            modgs::save_scene(out, modgs::make_scene(spec, seed));
            json resolved = read_json(synth_c.config);
            resolved["seed"] = seed;
            write_json(fs::path(out) / "config.json", resolved);
            modgs::log(modgs::LogLevel::info, "wrote scene to " + out);
        } else if (align->parsed()) {
            const auto out = require_out(align_c, "align-depth");
            auto cfg = resolve_train_config(align_c);
            if (threshold) cfg.static_threshold = *threshold;
            const auto scene = modgs::load_scene(scene_dir);
            const auto statics = modgs::static_mask(std::span<const modgs::FlowField>(scene.flows), cfg.static_threshold);
            const auto scales = modgs::solve_scales(scene.frames, statics);
            json j{{"threshold", cfg.static_threshold}, {"static_pixels", modgs::count_valid(statics.mask)}, {"scales", json::object()}};
            for (std::size_t f = 0; f < scales.size(); ++f) j["scales"][std::to_string(f)] = scales[f].s;
            write_json(out, j);
        } else if (liftc->parsed()) {
            const auto out = fs::path(require_out(lift_c, "lift-flow"));
            const auto scene = modgs::load_scene(scene_dir);
            const auto scales = read_scales(scales_path, scene.frames.size());
            const auto rectified = modgs::rectify(scene.frames, scales);
            const int s = stride.value_or(scene.keyframe_stride);
            modgs::SceneFlow3D flows;
            for (auto [i, j] : modgs::keyframe_pairs(static_cast<int>(scene.frames.size()), s)) {
                const auto it = std::find_if(scene.flows.begin(), scene.flows.end(),
                                             [&](const auto& f) { return f.from == i && f.to == j; });
                if (it == scene.flows.end())
                    throw modgs::ArgumentError("--stride " + std::to_string(s) + ": scene has no flow " +
                                               std::to_string(i) + "->" + std::to_string(j));
                flows.append(modgs::lift(rectified[static_cast<std::size_t>(i)], rectified[static_cast<std::size_t>(j)],
                                         it->flow, &it->valid));
            }
            modgs::Tensor t;
            t.shape = {flows.size(), 8};
            std::vector<float> data;
            for (const auto& p : flows.pairs)
                for (double v : {p.x_i.x, p.x_i.y, p.x_i.z, p.x_j.x, p.x_j.y, p.x_j.z, p.t_i, p.t_j})
                    data.push_back(static_cast<float>(v));
            t.data = std::move(data);
            fs::create_directories(out);
            modgs::save_mdt(out / "pairs.mdt", t);
            modgs::log(modgs::LogLevel::info, "lifted " + std::to_string(flows.size()) + " pairs");
        } else if (initw->parsed()) {
            const auto out = fs::path(require_out(initw_c, "init-warp"));
            const auto cfg = resolve_train_config(initw_c);
            const auto scene = modgs::load_scene(scene_dir);
            const auto prep = modgs::prepare_scene(scene, cfg);
            modgs::Model m{modgs::WarpField::near_identity(cfg.warp, cfg.seed), {}, prep.norm, scene.background};
            modgs::TrainLog log;
            const auto rep = modgs::train_init_stage(prep.flows, m.field, cfg, &log);
            fs::create_directories(out);
            json resolved = modgs::to_json(cfg);
            resolved["run"] = run_info(initw_c, scene_dir);
            write_json(out / "config.json", resolved);
            log.write_csv(out / "init_log.csv");
            modgs::save_checkpoint(out / "warp.ckpt", m, {{"initial_loss", rep.initial_loss}, {"final_loss", rep.final_loss}});
            std::cout << json{{"initial_loss", rep.initial_loss}, {"final_loss", rep.final_loss}}.dump() << '\n';
        } else if (initg->parsed()) {
            const auto out = fs::path(require_out(initg_c, "init-gaussians"));
            const auto cfg = resolve_train_config(initg_c);
            const auto scene = modgs::load_scene(scene_dir);
            const auto prep = modgs::prepare_scene(scene, cfg);
            auto loaded = modgs::load_checkpoint(warp_ckpt);
            if (!(loaded.model.norm == prep.norm))
                throw modgs::ArgumentError("--warp " + warp_ckpt + ": checkpoint was fitted with a different scene normalization");
            loaded.model.gaussians = modgs::init_gaussians(prep.frames, loaded.model.field, cfg.voxel);
            fs::create_directories(out);
            modgs::save_checkpoint(out / "gaussians.ckpt", loaded.model);
            modgs::save_ply(out / "gaussians.ply", loaded.model.gaussians);
            modgs::log(modgs::LogLevel::info, std::to_string(loaded.model.gaussians.size()) + " Gaussians");
        } else if (trainc->parsed()) {
            const auto out = fs::path(require_out(train_c, "train"));
            auto cfg = resolve_train_config(train_c);
            if (depth_loss) cfg.depth_loss = modgs::depth_loss_kind_from(*depth_loss);
            if (warp_init) cfg.warp_init = modgs::warp_init_from(*warp_init);
            if (init_steps) cfg.init_steps = *init_steps;
            if (joint_steps) cfg.joint_steps = *joint_steps;
            cfg.validate();
            const auto scene = modgs::load_scene(scene_dir);
            fs::create_directories(out);
            json resolved = modgs::to_json(cfg);
            resolved["run"] = run_info(train_c, fs::absolute(scene_dir).string());
            write_json(out / "config.json", resolved);
            modgs::TrainLog log;
            const auto res = modgs::train(scene, cfg, &log);
            log.write_csv(out / "train_log.csv");
            json scales = json::object();
            for (std::size_t f = 0; f < res.scales.size(); ++f) scales[std::to_string(f)] = res.scales[f].s;
            write_json(out / "scales.json", {{"scales", scales}});
            modgs::save_checkpoint(out / "model.ckpt", res.model,
                                   {{"init_initial_loss", res.init.initial_loss}, {"init_final_loss", res.init.final_loss}});
            modgs::save_ply(out / "gaussians.ply", res.model.gaussians);
            modgs::log(modgs::LogLevel::info, "wrote run to " + out.string());
        } else if (renderc->parsed()) {
            const auto out = require_out(render_c, "render");
            const json cfg = read_json((fs::path(run_dir) / "config.json").string());
            const auto scene = modgs::load_scene(cfg.at("run").at("scene").get<std::string>());
            const auto m = modgs::load_checkpoint(fs::path(run_dir) / "model.ckpt").model;
            std::vector<modgs::FrameBundle> storage;
            const auto& frames = view_frames(scene, camera_name, storage);
            if (frame < 0 || static_cast<std::size_t>(frame) >= frames.size())
                throw modgs::ArgumentError("--frame " + std::to_string(frame) + " out of range");
            const auto& fr = frames[static_cast<std::size_t>(frame)];
            const auto r = modgs::render_view(m, fr.camera, fr.t);
            modgs::Mask covered(r.alpha.width(), r.alpha.height(), 0);
            for (std::size_t i = 0; i < covered.size(); ++i) covered[i] = r.alpha[i] >= 1e-4;
            modgs::save_ppm(out + ".ppm", r.image);
            modgs::save_pgm(out + "_depth.pgm", r.depth, &covered);
        } else if (evalc->parsed()) {
            const json cfg_j = read_json((fs::path(run_dir) / "config.json").string());
            const auto cfg = modgs::train_config_from_json([&] {
                json c = cfg_j;
                c.erase("run");
                return c;
            }());
            const auto scene = modgs::load_scene(cfg_j.at("run").at("scene").get<std::string>());
            const auto m = modgs::load_checkpoint(fs::path(run_dir) / "model.ckpt").model;
            std::vector<modgs::FrameBundle> storage;
            const auto& frames = view_frames(scene, holdout, storage);
            const auto rep = modgs::evaluate(m, frames, cfg.eval_pairs, eval_c.seed.value_or(0));
            json j = modgs::to_json(rep);
            j["holdout"] = holdout;
            const fs::path out = eval_c.out.empty() ? fs::path(run_dir) / ("eval_" + holdout + ".json") : fs::path(eval_c.out);
            write_json(out, j);
            std::cout << j.dump(2) << '\n';
        } else if (verify->parsed()) {
            bool all = true;
            for (const auto& r : modgs::selfcheck::run_all(verify_c.seed.value_or(0))) {
                std::cout << (r.passed ? "PASS" : "FAIL") << "  " << r.name << "  (" << r.detail << ")\n";
                all = all && r.passed;
            }
            return all ? 0 : 3;
        }
    } catch (const CLI::ParseError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 1;
    } catch (const modgs::TrainingError& e) {
        std::cerr << "training error: " << e.what() << '\n';
        return 3;
    } catch (const modgs::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
