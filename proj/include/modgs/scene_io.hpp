// SPDX-License-Identifier: Apache-2.0
//
// Training inputs on disk: a directory with manifest.json plus one MDT tensor
// per image, depth map, mask and flow field.
#pragma once

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"
#include "modgs/synth.hpp"
#include "modgs/tensor_io.hpp"

namespace modgs {

/// Everything the trainer consumes, plus the ground truth used for evaluation.
struct SceneData {
    std::vector<FrameBundle> frames;  // `depth` is the degraded (estimated) depth
    std::vector<DepthMap> depth_gt;   // training-camera ground truth
    std::vector<FlowField> flows;     // between key-frame pairs
    std::vector<HoldoutView> holdouts;
    Rgb background;
    int keyframe_stride = 5;
    DepthDegradation degradation;
};

/// Generates a scene and degrades its training-camera depth.
inline SceneData make_scene(const SceneSpec& spec, std::uint64_t seed) {
    SyntheticScene syn = generate(spec, seed);
    SceneData out;
    out.degradation = sample_degradation(spec.degradation, spec.n_frames, seed);
    for (std::size_t f = 0; f < syn.frames.size(); ++f) {
        FrameBundle fb = syn.frames[f];
        out.depth_gt.push_back(fb.depth);
        fb.depth = degrade(fb.depth, out.degradation, static_cast<int>(f), seed);
        out.frames.push_back(std::move(fb));
    }
    out.flows = std::move(syn.flows);
    out.holdouts = std::move(syn.holdouts);
    out.background = spec.background;
    out.keyframe_stride = spec.keyframe_stride;
    return out;
}

// JSON helpers ------------------------------------------------------------------

inline nlohmann::json camera_to_json(const Camera& c) {
    const auto& p = c.pose();
    return {{"fx", c.fx()},
            {"fy", c.fy()},
            {"cx", c.cx()},
            {"cy", c.cy()},
            {"width", c.width()},
            {"height", c.height()},
            {"rotation", p.rotation.m},
            {"translation", {p.translation.x, p.translation.y, p.translation.z}}};
}

inline Camera camera_from_json(const nlohmann::json& j) {
    RigidTransform pose;
    const auto r = j.at("rotation").get<std::vector<double>>();
    const auto t = j.at("translation").get<std::vector<double>>();
    if (r.size() != 9 || t.size() != 3) throw FormatError("camera: rotation needs 9 and translation 3 values");
    std::copy(r.begin(), r.end(), pose.rotation.m.begin());
    pose.translation = {t[0], t[1], t[2]};
    return Camera(j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
                  j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>(), pose);
}

inline nlohmann::json rgb_to_json(const Rgb& c) { return {c.r, c.g, c.b}; }
inline Rgb rgb_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3) throw FormatError("expected an RGB triple");
    return {v[0], v[1], v[2]};
}

inline std::string frame_stem(std::size_t f) {
    std::ostringstream os;
    os << std::setw(3) << std::setfill('0') << f;
    return os.str();
}

// Directory IO ------------------------------------------------------------------

inline void save_scene(const std::filesystem::path& dir, const SceneData& s) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "frames");
    fs::create_directories(dir / "flows");
    nlohmann::json m;
    m["format"] = "modgs-scene";
    m["version"] = 1;
    m["keyframe_stride"] = s.keyframe_stride;
    m["background_color"] = rgb_to_json(s.background);
    m["degradation"] = {{"scale", s.degradation.scale},
                        {"offset", s.degradation.offset},
                        {"gamma", s.degradation.gamma},
                        {"noise_sigma", s.degradation.noise_sigma}};
    m["frames"] = nlohmann::json::array();
    for (std::size_t f = 0; f < s.frames.size(); ++f) {
        const auto& fr = s.frames[f];
        const std::string stem = "frames/" + frame_stem(f);
        save_mdt(dir / (stem + "_image.mdt"), to_tensor(fr.image, DType::f32));
        save_mdt(dir / (stem + "_depth.mdt"), to_tensor(fr.depth, DType::f32));
        save_mdt(dir / (stem + "_depth_gt.mdt"), to_tensor(s.depth_gt[f], DType::f32));
        save_mdt(dir / (stem + "_mask.mdt"), to_tensor(fr.mask, DType::u8));
        m["frames"].push_back({{"index", f},
                               {"t", fr.t},
                               {"camera", camera_to_json(fr.camera)},
                               {"image", stem + "_image.mdt"},
                               {"depth_degraded", stem + "_depth.mdt"},
                               {"depth_gt", stem + "_depth_gt.mdt"},
                               {"mask", stem + "_mask.mdt"}});
    }
    m["flows"] = nlohmann::json::array();
    for (const auto& fl : s.flows) {
        const std::string stem = "flows/" + frame_stem(static_cast<std::size_t>(fl.from)) + "_" +
                                 frame_stem(static_cast<std::size_t>(fl.to));
        save_mdt(dir / (stem + "_flow.mdt"), to_tensor(fl.flow, DType::f32));
        save_mdt(dir / (stem + "_valid.mdt"), to_tensor(fl.valid, DType::u8));
        m["flows"].push_back(
            {{"from", fl.from}, {"to", fl.to}, {"flow", stem + "_flow.mdt"}, {"valid", stem + "_valid.mdt"}});
    }
    m["holdouts"] = nlohmann::json::array();
    for (const auto& h : s.holdouts) {
        fs::create_directories(dir / "holdout" / h.name);
        nlohmann::json hj{{"name", h.name}, {"frames", nlohmann::json::array()}};
        for (std::size_t f = 0; f < h.frames.size(); ++f) {
            const auto& fr = h.frames[f];
            const std::string stem = "holdout/" + h.name + "/" + frame_stem(f);
            save_mdt(dir / (stem + "_image.mdt"), to_tensor(fr.image, DType::f32));
            save_mdt(dir / (stem + "_depth_gt.mdt"), to_tensor(fr.depth, DType::f32));
            save_mdt(dir / (stem + "_mask.mdt"), to_tensor(fr.mask, DType::u8));
            hj["frames"].push_back({{"t", fr.t},
                                    {"camera", camera_to_json(fr.camera)},
                                    {"image", stem + "_image.mdt"},
                                    {"depth_gt", stem + "_depth_gt.mdt"},
                                    {"mask", stem + "_mask.mdt"}});
        }
        m["holdouts"].push_back(std::move(hj));
    }
    std::ofstream os(dir / "manifest.json");
    if (!os) throw FormatError("cannot write '" + (dir / "manifest.json").string() + "'");
    os << m.dump(2) << '\n';
}

inline SceneData load_scene(const std::filesystem::path& dir) {
    const auto manifest = dir / "manifest.json";
    std::ifstream is(manifest);
    if (!is) throw FormatError("cannot open scene manifest '" + manifest.string() + "'");
    try {
        const auto m = nlohmann::json::parse(is);
        if (m.value("format", "") != "modgs-scene") throw FormatError("'" + manifest.string() + "' is not a scene manifest");
        SceneData s;
        s.keyframe_stride = m.at("keyframe_stride").get<int>();
        s.background = rgb_from_json(m.at("background_color"));
        const auto& d = m.at("degradation");
        s.degradation.scale = d.at("scale").get<std::vector<double>>();
        s.degradation.offset = d.at("offset").get<std::vector<double>>();
        s.degradation.gamma = d.at("gamma").get<std::vector<double>>();
        s.degradation.noise_sigma = d.at("noise_sigma").get<double>();
        for (const auto& fj : m.at("frames")) {
            FrameBundle fb;
            fb.t = fj.at("t").get<double>();
            fb.camera = camera_from_json(fj.at("camera"));
            fb.image = from_tensor<Rgb>(load_mdt(dir / fj.at("image").get<std::string>()));
            fb.depth = from_tensor<double>(load_mdt(dir / fj.at("depth_degraded").get<std::string>()));
            fb.mask = from_tensor<std::uint8_t>(load_mdt(dir / fj.at("mask").get<std::string>()));
            s.depth_gt.push_back(from_tensor<double>(load_mdt(dir / fj.at("depth_gt").get<std::string>())));
            fb.validate();
            s.frames.push_back(std::move(fb));
        }
        for (const auto& fj : m.at("flows")) {
            FlowField fl;
            fl.from = fj.at("from").get<int>();
            fl.to = fj.at("to").get<int>();
            fl.flow = from_tensor<Vec2>(load_mdt(dir / fj.at("flow").get<std::string>()));
            fl.valid = from_tensor<std::uint8_t>(load_mdt(dir / fj.at("valid").get<std::string>()));
            s.flows.push_back(std::move(fl));
        }
        for (const auto& hj : m.at("holdouts")) {
            HoldoutView h{hj.at("name").get<std::string>(), {}};
            for (const auto& fj : hj.at("frames")) {
                FrameBundle fb;
                fb.t = fj.at("t").get<double>();
                fb.camera = camera_from_json(fj.at("camera"));
                fb.image = from_tensor<Rgb>(load_mdt(dir / fj.at("image").get<std::string>()));
                fb.depth = from_tensor<double>(load_mdt(dir / fj.at("depth_gt").get<std::string>()));
                fb.mask = from_tensor<std::uint8_t>(load_mdt(dir / fj.at("mask").get<std::string>()));
                h.frames.push_back(std::move(fb));
            }
            s.holdouts.push_back(std::move(h));
        }
        if (s.frames.empty()) throw FormatError("'" + manifest.string() + "' lists no frames");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("'" + manifest.string() + "': " + e.what());
    }
}

}  // namespace modgs
