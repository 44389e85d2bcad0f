// SPDX-License-Identifier: Apache-2.0
//
// Built-in property checks run by `modgs verify`. Each check is small enough
// to finish in well under a second.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "modgs/losses.hpp"
#include "modgs/random.hpp"
#include "modgs/splat.hpp"
#include "modgs/warpfield.hpp"

namespace modgs::selfcheck {

inline std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

inline CheckResult warp_invertibility(std::uint64_t seed) {
    double worst = 0.0;
    Rng rng = make_rng(seed, 1);
    for (int draw = 0; draw < 20; ++draw) {
        const WarpField f = WarpField::random({6, 16, 4, 3.0}, mix_seed(seed, 100 + draw), 0.5);
        for (int k = 0; k < 50; ++k) {
            const Vec3 x{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
            const double t = uniform(rng);
            worst = std::max(worst, max_abs(f.inverse(f.forward(x, t), t) - x));
        }
    }
    return {"warp invertibility", worst < 1e-5, "max error " + sci(worst)};
}

inline CheckResult pearson_ssi_identity(std::uint64_t seed) {
    Rng rng = make_rng(seed, 2);
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
        DepthMap a(16, 16), b(16, 16);
        for (std::size_t i = 0; i < a.size(); ++i) a[i] = uniform(rng, 0.5, 3.0), b[i] = a[i] + uniform(rng, -1, 1);
        const Mask m(16, 16, 1);
        const double n = static_cast<double>(a.size());
        const double gap = std::abs(ssi_loss(a, b, m).value - 2 * n * pearson_loss(a, b, m).value);
        worst = std::max(worst, gap / n);
    }
    return {"pearson/ssi identity", worst < 1e-6, "max gap/N " + sci(worst)};
}

/// Naive compositor: every Gaussian tested at every pixel, depth order by a
/// plain sort.
inline RenderOutput naive_render(const GaussianSet& g, const Camera& cam, const Rgb& bg) {
    RenderOutput out{Image(cam.width(), cam.height()), DepthMap(cam.width(), cam.height(), 0.0),
                     Grid2D<double>(cam.width(), cam.height(), 0.0)};
    std::vector<std::tuple<double, std::size_t, Splat>> items;
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Splat s = project_gaussian(g, i, cam, {});
        if (s.p_cam.z > 0.01 && s.conic_a > 0) items.emplace_back(s.p_cam.z, i, s);
    }
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return std::tie(std::get<0>(a), std::get<1>(a)) < std::tie(std::get<0>(b), std::get<1>(b)); });
    for (int y = 0; y < cam.height(); ++y)
        for (int x = 0; x < cam.width(); ++x) {
            double T = 1.0, z = 0.0;
            Rgb c{};
            for (const auto& [depth, i, s] : items) {
                const double dx = x - s.mean.x, dy = y - s.mean.y;
                const double power = s.conic_a * dx * dx + 2 * s.conic_b * dx * dy + s.conic_c * dy * dy;
                if (power > 9.0) continue;
                const double a = s.opacity * std::exp(-0.5 * power);
                c += g.color[i] * (a * T);
                z += depth * a * T;
                T *= 1 - a;
            }
            out.image(x, y) = c + bg * T;
            out.alpha(x, y) = 1 - T;
            if (1 - T >= 1e-4) out.depth(x, y) = z / (1 - T);
        }
    return out;
}

inline GaussianSet random_gaussians(Rng& rng, std::size_t n) {
    GaussianSet g;
    for (std::size_t i = 0; i < n; ++i) {
        const Quat q{uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
        g.push_back({uniform(rng, -0.6, 0.6), uniform(rng, -0.6, 0.6), uniform(rng, 2.0, 4.0)},
                    {uniform(rng, -2.5, -1.2), uniform(rng, -2.5, -1.2), uniform(rng, -2.5, -1.2)}, q.normalized(),
                    uniform(rng, -1, 2), {uniform(rng), uniform(rng), uniform(rng)});
    }
    return g;
}

inline CheckResult renderer_oracle(std::uint64_t seed) {
    Rng rng = make_rng(seed, 3);
    const Camera cam(16, 16, 7.5, 7.5, 16, 16);
    double worst = 0.0;
    for (int k = 0; k < 10; ++k) {
        const GaussianSet g = random_gaussians(rng, 1 + uniform_index(rng, 5));
        const Rgb bg{0.1, 0.2, 0.3};
        const RenderOutput a = render(g, cam, bg), b = naive_render(g, cam, bg);
        for (std::size_t i = 0; i < a.image.size(); ++i) {
            worst = std::max(worst, max_abs(Vec3{a.image[i].r - b.image[i].r, a.image[i].g - b.image[i].g,
                                                  a.image[i].b - b.image[i].b}));
            worst = std::max({worst, std::abs(a.depth[i] - b.depth[i]), std::abs(a.alpha[i] - b.alpha[i])});
        }
    }
    return {"renderer vs naive compositor", worst < 1e-6, "max difference " + sci(worst)};
}

inline CheckResult ordinal_gradient(std::uint64_t seed) {
    Rng rng = make_rng(seed, 4);
    DepthMap gt(8, 8), r(8, 8);
    for (std::size_t i = 0; i < gt.size(); ++i) gt[i] = uniform(rng), r[i] = uniform(rng, 0.0, 0.03);
    const PairSample s = sample_pairs(gt, Mask(8, 8, 1), 64, 0.02, seed);
    const DepthLoss l = ordinal_loss(r, s, 100.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
        DepthMap p = r, m = r;
        p[i] += 1e-4, m[i] -= 1e-4;
        const double fd = (ordinal_loss(p, s, 100.0).value - ordinal_loss(m, s, 100.0).value) / 2e-4;
        worst = std::max(worst, std::abs(fd - l.grad[i]) / std::max(1e-3, std::abs(fd)));
    }
    return {"ordinal loss gradient", worst < 1e-3, "max relative error " + sci(worst)};
}

inline CheckResult voxel_oracle(std::uint64_t seed) {
    Rng rng = make_rng(seed, 5);
    std::vector<Vec3> pts(500);
    std::vector<Rgb> cols(500);
    for (auto& p : pts) p = {uniform(rng, -1, 1), uniform(rng, -1, 1), uniform(rng, -1, 1)};
    const double voxel = 0.25;
    std::map<std::tuple<long, long, long>, std::pair<Vec3, int>> buckets;
    for (const auto& p : pts) {
        auto& b = buckets[{std::lround(std::floor(p.x / voxel)), std::lround(std::floor(p.y / voxel)),
                           std::lround(std::floor(p.z / voxel))}];
        b.first += p;
        ++b.second;
    }
    const auto cells = voxel_downsample(pts, cols, voxel);
    bool ok = cells.size() == buckets.size();
    for (const auto& [k, b] : buckets) {
        const Vec3 c = b.first * (1.0 / b.second);
        ok = ok && std::any_of(cells.begin(), cells.end(), [&](const VoxelCell& v) { return max_abs(v.centroid - c) < 1e-9; });
    }
    return {"voxel downsample vs bucket oracle", ok, std::to_string(cells.size()) + " cells"};
}

inline std::vector<CheckResult> run_all(std::uint64_t seed) {
    return {warp_invertibility(seed), pearson_ssi_identity(seed), renderer_oracle(seed), ordinal_gradient(seed),
            voxel_oracle(seed)};
}

}  // namespace modgs::selfcheck
