// SPDX-License-Identifier: Apache-2.0
//
// Canonical Gaussian sets and a software splatting renderer.
//
// Each Gaussian's covariance R·diag(exp(2·log_scale))·Rᵀ is pushed through the
// local affine approximation of the perspective projection, giving a 2D
// conic. Pixels composite the Gaussians front to back in order of their center
// depth; depth maps composite the center z values with the color weights.
// Contributions are cut off outside the 3σ ellipse. The rasterizer works on
// 16×16 tiles, each holding the depth-sorted Gaussians whose 3σ box touches it.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <tuple>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"
#include "modgs/warpfield.hpp"

namespace modgs {

/// Quaternion (w, x, y, z); not necessarily unit length.
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    Quat normalized() const {
        const double n = norm();
        return {w / n, x / n, y / n, z / n};
    }
    friend bool operator==(const Quat&, const Quat&) = default;
};
static_assert(sizeof(Quat) == 4 * sizeof(double) && std::is_standard_layout_v<Quat>);

/// Rotation matrix of the normalized quaternion.
inline Mat3 rotation_matrix(const Quat& q_raw) {
    const Quat q = q_raw.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    return Mat3{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
                 2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
                 2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
}

/// Pulls dL/dR back to dL/dq through the normalization q̂ = q/|q|.
inline Quat rotation_matrix_backward(const Quat& q_raw, const Mat3& g) {
    const double n = q_raw.norm();
    const Quat q = q_raw.normalized();
    const double w = q.w, x = q.x, y = q.y, z = q.z;
    const double gw = 2 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    const double gx = 2 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2 * x * g(1, 1) - w * g(1, 2) +
                           z * g(2, 0) + w * g(2, 1) - 2 * x * g(2, 2));
    const double gy = 2 * (-2 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) -
                           w * g(2, 0) + z * g(2, 1) - 2 * y * g(2, 2));
    const double gz = 2 * (-2 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2 * z * g(1, 1) +
                           y * g(1, 2) + x * g(2, 0) + y * g(2, 1));
    const double proj = gw * w + gx * x + gy * y + gz * z;
    return {(gw - proj * w) / n, (gx - proj * x) / n, (gy - proj * y) / n, (gz - proj * z) / n};
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }
inline double logit(double p) { return std::log(p / (1.0 - p)); }

/// Structure-of-arrays Gaussian collection.
struct GaussianSet {
    std::vector<Vec3> position;
    std::vector<Vec3> log_scale;
    std::vector<Quat> rotation;
    std::vector<double> opacity_logit;
    std::vector<Rgb> color;

    std::size_t size() const { return position.size(); }
    bool empty() const { return position.empty(); }

    void resize(std::size_t n) {
        position.resize(n);
        log_scale.resize(n);
        rotation.resize(n);
        opacity_logit.resize(n);
        color.resize(n);
    }

    void push_back(const Vec3& p, const Vec3& ls, const Quat& q, double op_logit, const Rgb& c) {
        position.push_back(p);
        log_scale.push_back(ls);
        rotation.push_back(q);
        opacity_logit.push_back(op_logit);
        color.push_back(c);
    }

    /// Re-normalizes quaternions and clamps colors to [0,1].
    void sanitize() {
        for (auto& q : rotation) q = q.normalized();
        for (auto& c : color)
            for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(c[k], 0.0, 1.0);
    }

    friend bool operator==(const GaussianSet&, const GaussianSet&) = default;
};

/// Gradients of a scalar loss with respect to every Gaussian attribute.
struct GaussianGrads {
    std::vector<Vec3> position;
    std::vector<Vec3> log_scale;
    std::vector<Quat> rotation;
    std::vector<double> opacity_logit;
    std::vector<Rgb> color;

    explicit GaussianGrads(std::size_t n = 0)
        : position(n), log_scale(n), rotation(n, Quat{0, 0, 0, 0}), opacity_logit(n, 0.0), color(n) {}
};

// Initialization ------------------------------------------------------------------

/// One representative per occupied voxel: centroid of the voxel's points and
/// mean of their colors. Output is ordered by voxel index.
struct VoxelCell {
    Vec3 centroid;
    Rgb color;
    std::size_t count = 0;
};

inline std::vector<VoxelCell> voxel_downsample(std::span<const Vec3> points, std::span<const Rgb> colors,
                                               double voxel) {
    if (!(voxel > 0.0)) throw ArgumentError("voxel_downsample: voxel size must be positive");
    if (points.size() != colors.size()) throw ArgumentError("voxel_downsample: points/colors size mismatch");
    using Key = std::tuple<std::int64_t, std::int64_t, std::int64_t>;
    std::map<Key, VoxelCell> cells;
    for (std::size_t i = 0; i < points.size(); ++i) {
        const Vec3& p = points[i];
        const Key k{static_cast<std::int64_t>(std::floor(p.x / voxel)),
                    static_cast<std::int64_t>(std::floor(p.y / voxel)),
                    static_cast<std::int64_t>(std::floor(p.z / voxel))};
        auto& c = cells[k];
        c.centroid += p;
        c.color += colors[i];
        ++c.count;
    }
    std::vector<VoxelCell> out;
    out.reserve(cells.size());
    for (auto& [k, c] : cells) {
        const double inv = 1.0 / static_cast<double>(c.count);
        out.push_back({c.centroid * inv, c.color * inv, c.count});
    }
    return out;
}

/// Unprojects every valid pixel of every frame, pulls the points back to the
/// canonical space through the field's inverse, and keeps one Gaussian per
/// occupied voxel.
inline GaussianSet init_gaussians(std::span<const FrameBundle> frames, const WarpField& field, double voxel) {
    std::vector<Vec3> canonical;
    std::vector<Rgb> colors;
    for (const auto& fr : frames) {
        std::vector<Vec3> pts;
        for (int y = 0; y < fr.depth.height(); ++y)
            for (int x = 0; x < fr.depth.width(); ++x) {
                const std::size_t i = fr.depth.index(x, y);
                if (!fr.mask[i]) continue;
                pts.push_back(fr.camera.unproject({static_cast<double>(x), static_cast<double>(y)}, fr.depth[i]));
                colors.push_back(fr.image[i]);
            }
        if (pts.empty()) continue;
        std::vector<Vec3> back(pts.size());
        const double t = fr.t;
        field.inverse_batch(pts, std::span(&t, 1), back, nullptr);
        canonical.insert(canonical.end(), back.begin(), back.end());
    }
    if (canonical.empty()) throw InitializationError("init_gaussians: no valid depth points");
    GaussianSet g;
    const double ls = std::log(voxel);
    for (const auto& c : voxel_downsample(canonical, colors, voxel))
        g.push_back(c.centroid, {ls, ls, ls}, Quat{}, 0.0, c.color);
    return g;
}

/// Moves positions to time t; every other attribute is left as is.
inline GaussianSet deform(const GaussianSet& g, const WarpField& field, double t,
                          WarpField::Tape* tape = nullptr) {
    GaussianSet out = g;
    if (!g.empty()) field.forward_batch(g.position, std::span(&t, 1), out.position, tape);
    else if (!(t >= 0.0 && t <= 1.0)) throw ArgumentError("deform: time outside [0,1]");
    return out;
}

// Rendering ----------------------------------------------------------------------

struct RenderSettings {
    double near = 1e-2;        // Gaussians closer than this (camera z) are culled
    double dilation = 0.3;     // added to the 2D covariance diagonal, pixels²
    double cutoff_sigma = 3.0; // Mahalanobis radius beyond which a Gaussian contributes nothing
    double alpha_eps = 1e-4;   // below this accumulated alpha the depth is the sentinel
    double depth_sentinel = 0.0;
    int tile = 16;
};

struct RenderOutput {
    Image image;
    DepthMap depth;
    Grid2D<double> alpha;
};

/// A Gaussian after projection into one camera.
struct Splat {
    bool visible = false;
    Vec3 p_cam;
    Vec2 mean;
    double cov_a = 0, cov_b = 0, cov_c = 0;      // 2D covariance [[a,b],[b,c]]
    double conic_a = 0, conic_b = 0, conic_c = 0; // its inverse
    double opacity = 0;
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;         // inclusive pixel box of the 3σ ellipse
    Mat3 rot;                                     // normalized rotation
    Vec3 scale;
    Mat3 cov_cam;                                 // 3D covariance in camera frame
};

/// Everything render_backward needs from the forward pass.
struct RenderTape {
    std::vector<Splat> splats;
    std::vector<std::vector<std::uint32_t>> tiles;  // per-tile depth-sorted Gaussian indices
    int tiles_x = 0, tiles_y = 0;
    Grid2D<double> transmittance;                   // final T per pixel
};

inline Splat project_gaussian(const GaussianSet& g, std::size_t i, const Camera& cam, const RenderSettings& rs) {
    Splat s;
    const RigidTransform& view = cam.view();
    s.p_cam = view.apply(g.position[i]);
    if (!(s.p_cam.z > rs.near)) return s;
    const double x = s.p_cam.x, y = s.p_cam.y, z = s.p_cam.z;
    s.mean = {cam.fx() * x / z + cam.cx(), cam.fy() * y / z + cam.cy()};
    s.rot = rotation_matrix(g.rotation[i]);
    s.scale = {std::exp(g.log_scale[i].x), std::exp(g.log_scale[i].y), std::exp(g.log_scale[i].z)};
    const Mat3 m = s.rot * Mat3::diagonal(s.scale);
    const Mat3 cov_world = m * m.transposed();
    s.cov_cam = view.rotation * cov_world * view.rotation.transposed();
    // J = [[fx/z, 0, -fx x/z²], [0, fy/z, -fy y/z²]]
    const double j00 = cam.fx() / z, j02 = -cam.fx() * x / (z * z);
    const double j11 = cam.fy() / z, j12 = -cam.fy() * y / (z * z);
    const Mat3& c = s.cov_cam;
    // rows of J·Σ
    const double t0[3] = {j00 * c(0, 0) + j02 * c(2, 0), j00 * c(0, 1) + j02 * c(2, 1), j00 * c(0, 2) + j02 * c(2, 2)};
    const double t1[3] = {j11 * c(1, 0) + j12 * c(2, 0), j11 * c(1, 1) + j12 * c(2, 1), j11 * c(1, 2) + j12 * c(2, 2)};
    s.cov_a = t0[0] * j00 + t0[2] * j02 + rs.dilation;
    s.cov_b = t0[1] * j11 + t0[2] * j12;
    s.cov_c = t1[1] * j11 + t1[2] * j12 + rs.dilation;
    const double det = s.cov_a * s.cov_c - s.cov_b * s.cov_b;
    if (!(det > 0.0)) return s;
    s.conic_a = s.cov_c / det;
    s.conic_b = -s.cov_b / det;
    s.conic_c = s.cov_a / det;
    s.opacity = sigmoid(g.opacity_logit[i]);
    const double mid = 0.5 * (s.cov_a + s.cov_c);
    const double lambda_max = mid + std::sqrt(std::max(0.0, mid * mid - det));
    const double radius = rs.cutoff_sigma * std::sqrt(lambda_max);
    s.x0 = std::max(0, static_cast<int>(std::ceil(s.mean.x - radius)));
    s.x1 = std::min(cam.width() - 1, static_cast<int>(std::floor(s.mean.x + radius)));
    s.y0 = std::max(0, static_cast<int>(std::ceil(s.mean.y - radius)));
    s.y1 = std::min(cam.height() - 1, static_cast<int>(std::floor(s.mean.y + radius)));
    s.visible = s.x0 <= s.x1 && s.y0 <= s.y1;
    return s;
}

namespace detail {

struct Contribution {
    std::uint32_t index;
    double alpha;
    double transmittance;  // before this Gaussian
    double falloff;
    double dx, dy;
};

/// Front-to-back walk over one pixel's candidate list.
template <class F>
double composite_pixel(const std::vector<Splat>& splats, const std::vector<std::uint32_t>& list, double px,
                       double py, double cutoff2, F&& on_contribution) {
    double T = 1.0;
    for (std::uint32_t i : list) {
        const Splat& s = splats[i];
        const double dx = px - s.mean.x, dy = py - s.mean.y;
        const double power = s.conic_a * dx * dx + 2.0 * s.conic_b * dx * dy + s.conic_c * dy * dy;
        if (power > cutoff2) continue;
        const double falloff = std::exp(-0.5 * power);
        const double alpha = s.opacity * falloff;
        on_contribution(Contribution{i, alpha, T, falloff, dx, dy});
        T *= 1.0 - alpha;
    }
    return T;
}

}  // namespace detail

inline RenderOutput render(const GaussianSet& g, const Camera& cam, const Rgb& background,
                           const RenderSettings& rs = {}, RenderTape* tape = nullptr) {
    const int w = cam.width(), h = cam.height();
    RenderTape local;
    RenderTape& tp = tape ? *tape : local;
    tp.splats.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) tp.splats[i] = project_gaussian(g, i, cam, rs);

    std::vector<std::uint32_t> order;
    for (std::uint32_t i = 0; i < g.size(); ++i)
        if (tp.splats[i].visible) order.push_back(i);
    std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
        const double za = tp.splats[a].p_cam.z, zb = tp.splats[b].p_cam.z;
        return za < zb || (za == zb && a < b);
    });

    tp.tiles_x = (w + rs.tile - 1) / rs.tile;
    tp.tiles_y = (h + rs.tile - 1) / rs.tile;
    tp.tiles.assign(static_cast<std::size_t>(tp.tiles_x * tp.tiles_y), {});
    for (std::uint32_t i : order) {
        const Splat& s = tp.splats[i];
        for (int ty = s.y0 / rs.tile; ty <= s.y1 / rs.tile; ++ty)
            for (int tx = s.x0 / rs.tile; tx <= s.x1 / rs.tile; ++tx)
                tp.tiles[static_cast<std::size_t>(ty * tp.tiles_x + tx)].push_back(i);
    }

    RenderOutput out{Image(w, h), DepthMap(w, h, rs.depth_sentinel), Grid2D<double>(w, h, 0.0)};
    tp.transmittance = Grid2D<double>(w, h, 1.0);
    const double cutoff2 = rs.cutoff_sigma * rs.cutoff_sigma;
    for (int ty = 0; ty < tp.tiles_y; ++ty)
        for (int tx = 0; tx < tp.tiles_x; ++tx) {
            const auto& list = tp.tiles[static_cast<std::size_t>(ty * tp.tiles_x + tx)];
            for (int y = ty * rs.tile; y < std::min(h, (ty + 1) * rs.tile); ++y)
                for (int x = tx * rs.tile; x < std::min(w, (tx + 1) * rs.tile); ++x) {
                    Rgb color{};
                    double zsum = 0.0;
                    const double T = detail::composite_pixel(
                        tp.splats, list, x, y, cutoff2, [&](const detail::Contribution& c) {
                            const double wgt = c.alpha * c.transmittance;
                            color += g.color[c.index] * wgt;
                            zsum += tp.splats[c.index].p_cam.z * wgt;
                        });
                    const std::size_t p = out.image.index(x, y);
                    out.image[p] = color + background * T;
                    const double a = 1.0 - T;
                    out.alpha[p] = a;
                    if (a >= rs.alpha_eps) out.depth[p] = zsum / a;
                    tp.transmittance[p] = T;
                }
        }
    return out;
}

/// Loss gradients arriving at the rendered maps; empty grids mean zero.
struct RenderGradInput {
    Image d_image;
    DepthMap d_depth;
    Grid2D<double> d_alpha;
};

/// Backward pass of render(): pulls image/depth/alpha gradients back to every
/// Gaussian attribute (positions are the positions that were rendered).
inline GaussianGrads render_backward(const GaussianSet& g, const Camera& cam, const Rgb& background,
                                     const RenderOutput& fwd, const RenderTape& tp,
                                     const RenderGradInput& gin, const RenderSettings& rs = {}) {
    const int w = cam.width(), h = cam.height();
    const std::size_t n = g.size();
    struct Acc {
        double u = 0, v = 0, ca = 0, cb = 0, cc = 0, opacity = 0, depth = 0;
    };
    std::vector<Acc> acc(n);
    GaussianGrads out(n);
    const double cutoff2 = rs.cutoff_sigma * rs.cutoff_sigma;
    const bool has_img = !gin.d_image.empty(), has_depth = !gin.d_depth.empty(), has_alpha = !gin.d_alpha.empty();
    std::vector<detail::Contribution> contribs;

    for (int ty = 0; ty < tp.tiles_y; ++ty)
        for (int tx = 0; tx < tp.tiles_x; ++tx) {
            const auto& list = tp.tiles[static_cast<std::size_t>(ty * tp.tiles_x + tx)];
            if (list.empty()) continue;
            for (int y = ty * rs.tile; y < std::min(h, (ty + 1) * rs.tile); ++y)
                for (int x = tx * rs.tile; x < std::min(w, (tx + 1) * rs.tile); ++x) {
                    const std::size_t p = fwd.image.index(x, y);
                    const Rgb gc = has_img ? gin.d_image[p] : Rgb{};
                    const double gd = has_depth ? gin.d_depth[p] : 0.0;
                    const double ga = has_alpha ? gin.d_alpha[p] : 0.0;
                    if (gc == Rgb{} && gd == 0.0 && ga == 0.0) continue;
                    contribs.clear();
                    detail::composite_pixel(tp.splats, list, x, y, cutoff2,
                                            [&](const detail::Contribution& c) { contribs.push_back(c); });
                    const double a = fwd.alpha[p];
                    double d_zsum = 0.0, d_acc = ga;
                    if (a >= rs.alpha_eps) {
                        d_zsum = gd / a;
                        d_acc -= gd * fwd.depth[p] / a;
                    }
                    // composite of everything behind the current Gaussian
                    double behind = dot(gc, background);
                    for (auto it = contribs.rbegin(); it != contribs.rend(); ++it) {
                        const auto& c = *it;
                        const Splat& s = tp.splats[c.index];
                        const double wgt = c.alpha * c.transmittance;
                        const double q = dot(gc, g.color[c.index]) + d_zsum * s.p_cam.z + d_acc;
                        const double d_alpha = c.transmittance * (q - behind);
                        behind = q * c.alpha + (1.0 - c.alpha) * behind;

                        out.color[c.index] += gc * wgt;
                        Acc& A = acc[c.index];
                        A.depth += d_zsum * wgt;
                        A.opacity += d_alpha * c.falloff;
                        const double d_power = -0.5 * d_alpha * c.alpha;
                        A.ca += d_power * c.dx * c.dx;
                        A.cb += d_power * 2.0 * c.dx * c.dy;
                        A.cc += d_power * c.dy * c.dy;
                        A.u += d_power * -2.0 * (s.conic_a * c.dx + s.conic_b * c.dy);
                        A.v += d_power * -2.0 * (s.conic_b * c.dx + s.conic_c * c.dy);
                    }
                }
        }

    const RigidTransform& view = cam.view();
    for (std::size_t i = 0; i < n; ++i) {
        const Splat& s = tp.splats[i];
        if (!s.visible) continue;
        const Acc& A = acc[i];
        out.opacity_logit[i] = A.opacity * s.opacity * (1.0 - s.opacity);

        // conic -> 2D covariance: dΣ = -K·G·K with G the full-matrix conic gradient
        const double k00 = s.conic_a, k01 = s.conic_b, k11 = s.conic_c;
        const double g00 = A.ca, g01 = 0.5 * A.cb, g11 = A.cc;
        // K·G
        const double kg00 = k00 * g00 + k01 * g01, kg01 = k00 * g01 + k01 * g11;
        const double kg10 = k01 * g00 + k11 * g01, kg11 = k01 * g01 + k11 * g11;
        const double ds00 = -(kg00 * k00 + kg01 * k01);
        const double ds01 = -(kg00 * k01 + kg01 * k11);
        const double ds11 = -(kg10 * k01 + kg11 * k11);

        const double x = s.p_cam.x, y = s.p_cam.y, z = s.p_cam.z;
        const double fx = cam.fx(), fy = cam.fy();
        const double j00 = fx / z, j02 = -fx * x / (z * z), j11 = fy / z, j12 = -fy * y / (z * z);
        // J as 2x3, GΣ symmetric 2x2 [[ds00, ds01],[ds01, ds11]]
        const double J[2][3] = {{j00, 0.0, j02}, {0.0, j11, j12}};
        const double G[2][2] = {{ds00, ds01}, {ds01, ds11}};
        // dΣc = Jᵀ·G·J
        Mat3 d_cov_cam;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) v += J[a][r] * G[a][b] * J[b][c];
                d_cov_cam(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = v;
            }
        // dJ = 2·G·J·Σc
        double dJ[2][3] = {};
        for (int a = 0; a < 2; ++a)
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (int b = 0; b < 2; ++b)
                    for (int k = 0; k < 3; ++k)
                        v += G[a][b] * J[b][k] * s.cov_cam(static_cast<std::size_t>(k), static_cast<std::size_t>(c));
                dJ[a][c] = 2.0 * v;
            }

        Vec3 d_cam{A.u * fx / z, A.v * fy / z, -A.u * fx * x / (z * z) - A.v * fy * y / (z * z) + A.depth};
        d_cam.x += dJ[0][2] * (-fx / (z * z));
        d_cam.y += dJ[1][2] * (-fy / (z * z));
        d_cam.z += dJ[0][0] * (-fx / (z * z)) + dJ[0][2] * (2.0 * fx * x / (z * z * z)) +
                   dJ[1][1] * (-fy / (z * z)) + dJ[1][2] * (2.0 * fy * y / (z * z * z));
        out.position[i] = view.rotation.transposed() * d_cam;

        // Σc = V·Σw·Vᵀ,  Σw = M·Mᵀ,  M = R·S
        const Mat3 d_cov_world = view.rotation.transposed() * d_cov_cam * view.rotation;
        const Mat3 m = s.rot * Mat3::diagonal(s.scale);
        const Mat3 d_m = (d_cov_world + d_cov_world.transposed()) * m;
        Mat3 d_rot;
        Vec3 d_scale;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c) {
                d_rot(r, c) = d_m(r, c) * s.scale[c];
                d_scale[c] += s.rot(r, c) * d_m(r, c);
            }
        out.log_scale[i] = {d_scale.x * s.scale.x, d_scale.y * s.scale.y, d_scale.z * s.scale.z};
        out.rotation[i] = rotation_matrix_backward(g.rotation[i], d_rot);
    }
    return out;
}

/// ASCII PLY with position, 8-bit color and the raw Gaussian parameters.
inline void save_ply(const std::filesystem::path& path, const GaussianSet& g) {
    std::ofstream os(path);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "ply\nformat ascii 1.0\nelement vertex " << g.size() << "\n"
       << "property float x\nproperty float y\nproperty float z\n"
       << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
       << "property float scale_0\nproperty float scale_1\nproperty float scale_2\n"
       << "property float rot_0\nproperty float rot_1\nproperty float rot_2\nproperty float rot_3\n"
       << "property float opacity\nend_header\n";
    os.precision(9);
    auto byte = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
    for (std::size_t i = 0; i < g.size(); ++i) {
        const auto& p = g.position[i];
        const auto& s = g.log_scale[i];
        const auto& q = g.rotation[i];
        const auto& c = g.color[i];
        os << p.x << ' ' << p.y << ' ' << p.z << ' ' << byte(c.r) << ' ' << byte(c.g) << ' ' << byte(c.b) << ' '
           << s.x << ' ' << s.y << ' ' << s.z << ' ' << q.w << ' ' << q.x << ' ' << q.y << ' ' << q.z << ' '
           << g.opacity_logit[i] << '\n';
    }
}

}  // namespace modgs
