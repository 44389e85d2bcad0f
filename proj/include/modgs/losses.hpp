// SPDX-License-Identifier: Apache-2.0
//
// Supervision terms with values and gradients: the ordinal depth loss and its
// pair sampler, Pearson and scale-shift-invariant depth losses, a logistic
// ranking loss, and the L1 + D-SSIM photometric loss.
//
// Depth losses take gradients with respect to the first (rendered) argument.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"
#include "modgs/log.hpp"
#include "modgs/random.hpp"

namespace modgs {

/// A loss value and its gradient with respect to a depth grid.
struct DepthLoss {
    double value = 0.0;
    DepthMap grad;
};

struct ImageLoss {
    double value = 0.0;
    Image grad;
};

// Min-max normalization -------------------------------------------------------------

/// (d − lo)/(hi − lo) over masked pixels; unmasked pixels become 0.
struct Normalized {
    DepthMap values;
    double lo = 0.0, hi = 0.0;
    std::size_t argmin = 0, argmax = 0;
};

inline Normalized minmax_normalize(const DepthMap& d, const Mask& mask) {
    if (!d.same_shape(mask)) throw ArgumentError("minmax_normalize: depth and mask sizes differ");
    Normalized out{DepthMap(d.width(), d.height(), 0.0)};
    bool any = false;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (!mask[i]) continue;
        if (!any || d[i] < out.lo) out.lo = d[i], out.argmin = i;
        if (!any || d[i] > out.hi) out.hi = d[i], out.argmax = i;
        any = true;
    }
    if (!any || !(out.hi > out.lo)) throw DegenerateError("minmax_normalize: depth is constant on the mask");
    const double inv = 1.0 / (out.hi - out.lo);
    for (std::size_t i = 0; i < d.size(); ++i)
        if (mask[i]) out.values[i] = (d[i] - out.lo) * inv;
    return out;
}

/// Pulls a gradient on the normalized map back to the raw map, including the
/// paths through the extremes.
inline DepthMap minmax_normalize_backward(const Normalized& n, const Mask& mask, const DepthMap& grad_norm) {
    const double r = n.hi - n.lo;
    DepthMap g(grad_norm.width(), grad_norm.height(), 0.0);
    double g_lo = 0.0, g_hi = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
        if (!mask[i]) continue;
        g[i] = grad_norm[i] / r;
        g_lo += grad_norm[i] * (n.values[i] - 1.0) / r;
        g_hi -= grad_norm[i] * n.values[i] / r;
    }
    g[n.argmin] += g_lo;
    g[n.argmax] += g_hi;
    return g;
}

// Pair sampling ------------------------------------------------------------------

struct PairSample {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;  // flat pixel indices (u1, u2)
    std::vector<std::int8_t> orders;                         // sign of depth(u1) − depth(u2)

    std::size_t size() const { return pairs.size(); }
    bool empty() const { return pairs.empty(); }
};

/// Uniform rejection sampling of valid pixel pairs whose min-max normalized
/// depths differ by more than `delta`. At most 20·n_pairs draws are made.
inline PairSample sample_pairs(const DepthMap& depth_gt, const Mask& mask, std::size_t n_pairs, double delta,
                               std::uint64_t seed) {
    if (!depth_gt.same_shape(mask)) throw ArgumentError("sample_pairs: depth and mask sizes differ");
    if (n_pairs == 0) throw ArgumentError("sample_pairs: n_pairs must be positive");
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) valid.push_back(i);
    if (valid.size() < 2) throw SamplingError("sample_pairs: fewer than 2 valid pixels");

    PairSample out;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i : valid) lo = std::min(lo, depth_gt[i]), hi = std::max(hi, depth_gt[i]);
    if (hi > lo) {
        const double inv = 1.0 / (hi - lo);
        Rng rng = make_rng(seed, 0x9A1);
        const std::size_t budget = 20 * n_pairs;
        out.pairs.reserve(n_pairs);
        out.orders.reserve(n_pairs);
        for (std::size_t draw = 0; draw < budget && out.size() < n_pairs; ++draw) {
            const std::size_t a = valid[uniform_index(rng, valid.size())];
            const std::size_t b = valid[uniform_index(rng, valid.size())];
            const double diff = (depth_gt[a] - depth_gt[b]) * inv;
            if (!(std::abs(diff) > delta)) continue;
            out.pairs.emplace_back(a, b);
            out.orders.push_back(diff > 0 ? 1 : -1);
        }
    }
    if (out.empty()) throw SamplingError("sample_pairs: no pair differs by more than delta");
    if (out.size() < n_pairs)
        log(LogLevel::info, "sample_pairs: kept " + std::to_string(out.size()) + " of " +
                                std::to_string(n_pairs) + " requested pairs");
    return out;
}

/// Fraction of pairs whose order in `depth` matches the sample's order
/// (ties count as mismatches).
inline double depth_order_agreement(const DepthMap& depth, const PairSample& sample) {
    if (sample.empty()) throw ArgumentError("depth_order_agreement: empty sample");
    std::size_t agree = 0;
    for (std::size_t k = 0; k < sample.size(); ++k) {
        const double diff = depth[sample.pairs[k].first] - depth[sample.pairs[k].second];
        if ((sample.orders[k] > 0 && diff > 0) || (sample.orders[k] < 0 && diff < 0)) ++agree;
    }
    return static_cast<double>(agree) / static_cast<double>(sample.size());
}

// Pair losses ----------------------------------------------------------------------

/// Mean of |tanh(α·(D̂(u1) − D̂(u2))) − R|.
inline DepthLoss ordinal_loss(const DepthMap& rendered, const PairSample& sample, double alpha = 100.0) {
    if (sample.empty()) throw ArgumentError("ordinal_loss: empty sample");
    DepthLoss out{0.0, DepthMap(rendered.width(), rendered.height(), 0.0)};
    const double inv_n = 1.0 / static_cast<double>(sample.size());
    for (std::size_t k = 0; k < sample.size(); ++k) {
        const auto [a, b] = sample.pairs[k];
        const double r = sample.orders[k];
        const double th = std::tanh(alpha * (rendered[a] - rendered[b]));
        out.value += std::abs(th - r);
        // |th − r| = 1 − r·th since |th| < 1
        const double g = -r * alpha * (1.0 - th * th) * inv_n;
        out.grad[a] += g;
        out.grad[b] -= g;
    }
    out.value *= inv_n;
    return out;
}

/// Mean of log(1 + exp(−R·(D̂(u1) − D̂(u2)))).
inline DepthLoss ranking_loss(const DepthMap& rendered, const PairSample& sample) {
    if (sample.empty()) throw ArgumentError("ranking_loss: empty sample");
    DepthLoss out{0.0, DepthMap(rendered.width(), rendered.height(), 0.0)};
    const double inv_n = 1.0 / static_cast<double>(sample.size());
    for (std::size_t k = 0; k < sample.size(); ++k) {
        const auto [a, b] = sample.pairs[k];
        const double r = sample.orders[k];
        const double z = -r * (rendered[a] - rendered[b]);
        out.value += std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
        const double sig = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
        const double g = -r * sig * inv_n;
        out.grad[a] += g;
        out.grad[b] -= g;
    }
    out.value *= inv_n;
    return out;
}

// Correlation losses ---------------------------------------------------------------

namespace detail {

struct Moments {
    std::size_t n = 0;
    double mean_a = 0, mean_b = 0;
    double saa = 0, sbb = 0, sab = 0;  // centered sums of squares / products
};

inline Moments masked_moments(const DepthMap& a, const DepthMap& b, const Mask& mask, const char* who) {
    if (!a.same_shape(b) || !a.same_shape(mask)) throw ArgumentError(std::string(who) + ": sizes differ");
    Moments m;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (mask[i]) ++m.n, m.mean_a += a[i], m.mean_b += b[i];
    if (m.n < 2) throw DegenerateError(std::string(who) + ": fewer than 2 valid pixels");
    m.mean_a /= static_cast<double>(m.n);
    m.mean_b /= static_cast<double>(m.n);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!mask[i]) continue;
        const double da = a[i] - m.mean_a, db = b[i] - m.mean_b;
        m.saa += da * da;
        m.sbb += db * db;
        m.sab += da * db;
    }
    if (!(m.saa > 0.0) || !(m.sbb > 0.0)) throw DegenerateError(std::string(who) + ": zero variance");
    return m;
}

}  // namespace detail

/// 1 − Pearson correlation over masked pixels.
inline DepthLoss pearson_loss(const DepthMap& rendered, const DepthMap& gt, const Mask& mask) {
    const auto m = detail::masked_moments(rendered, gt, mask, "pearson_loss");
    const double root = std::sqrt(m.saa * m.sbb);
    const double corr = m.sab / root;
    DepthLoss out{1.0 - corr, DepthMap(rendered.width(), rendered.height(), 0.0)};
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask[i]) continue;
        out.grad[i] = -((gt[i] - m.mean_b) / root - corr * (rendered[i] - m.mean_a) / m.saa);
    }
    return out;
}

/// Σ (Norm(gt) − Norm(rendered))² with Norm(d) = (d − mean)/std (population std).
inline DepthLoss ssi_loss(const DepthMap& rendered, const DepthMap& gt, const Mask& mask) {
    const auto m = detail::masked_moments(rendered, gt, mask, "ssi_loss");
    const double n = static_cast<double>(m.n);
    const double sd_a = std::sqrt(m.saa / n), sd_b = std::sqrt(m.sbb / n);
    DepthLoss out{0.0, DepthMap(rendered.width(), rendered.height(), 0.0)};
    double mean_r = 0.0, mean_rn = 0.0;  // means of (g − n̂) and (g − n̂)·n̂
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask[i]) continue;
        const double na = (rendered[i] - m.mean_a) / sd_a, nb = (gt[i] - m.mean_b) / sd_b;
        const double r = nb - na;
        out.value += r * r;
        mean_r += r;
        mean_rn += r * na;
    }
    mean_r /= n;
    mean_rn /= n;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
        if (!mask[i]) continue;
        const double na = (rendered[i] - m.mean_a) / sd_a, nb = (gt[i] - m.mean_b) / sd_b;
        out.grad[i] = -2.0 / sd_a * ((nb - na) - mean_r - na * mean_rn);
    }
    return out;
}

// Photometric loss ----------------------------------------------------------------

inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

namespace detail {

inline std::array<double, 11> gaussian_window() {
    std::array<double, 11> w{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) sum += w[static_cast<std::size_t>(i)] = std::exp(-(i - 5) * (i - 5) / (2.0 * 1.5 * 1.5));
    for (double& v : w) v /= sum;
    return w;
}

/// Separable 11×11 Gaussian filter with zero padding; the kernel is symmetric,
/// so this is also its own adjoint.
inline std::vector<double> blur(const std::vector<double>& src, int w, int h) {
    static const auto k = gaussian_window();
    std::vector<double> tmp(src.size(), 0.0), out(src.size(), 0.0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -5; d <= 5; ++d) {
                const int xx = x + d;
                if (xx >= 0 && xx < w) s += k[static_cast<std::size_t>(d + 5)] * src[static_cast<std::size_t>(y * w + xx)];
            }
            tmp[static_cast<std::size_t>(y * w + x)] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -5; d <= 5; ++d) {
                const int yy = y + d;
                if (yy >= 0 && yy < h) s += k[static_cast<std::size_t>(d + 5)] * tmp[static_cast<std::size_t>(yy * w + x)];
            }
            out[static_cast<std::size_t>(y * w + x)] = s;
        }
    return out;
}

}  // namespace detail

/// Mean SSIM over pixels and channels; with `grad` non-null it also receives
/// d(mean SSIM)/d(a).
inline double ssim(const Image& a, const Image& b, Image* grad = nullptr) {
    if (!a.same_shape(b)) throw ArgumentError("ssim: image sizes differ");
    const int w = a.width(), h = a.height();
    const std::size_t n = a.size();
    if (grad) *grad = Image(w, h);
    double total = 0.0;
    const double inv_count = 1.0 / (3.0 * static_cast<double>(n));
    std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
    for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            x[i] = a[i][c];
            y[i] = b[i][c];
            xx[i] = x[i] * x[i];
            yy[i] = y[i] * y[i];
            xy[i] = x[i] * y[i];
        }
        const auto mx = detail::blur(x, w, h), my = detail::blur(y, w, h);
        const auto exx = detail::blur(xx, w, h), eyy = detail::blur(yy, w, h), exy = detail::blur(xy, w, h);
        std::vector<double> g_mu(grad ? n : 0), g_exx(grad ? n : 0), g_exy(grad ? n : 0);
        for (std::size_t i = 0; i < n; ++i) {
            const double vx = exx[i] - mx[i] * mx[i], vy = eyy[i] - my[i] * my[i];
            const double cxy = exy[i] - mx[i] * my[i];
            const double a1 = 2 * mx[i] * my[i] + kSsimC1, a2 = 2 * cxy + kSsimC2;
            const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1, b2 = vx + vy + kSsimC2;
            const double s = a1 * a2 / (b1 * b2);
            total += s;
            if (!grad) continue;
            const double ds_dcxy = 2 * a1 / (b1 * b2);
            const double ds_dvx = -s / b2;
            const double ds_dmx = 2 * my[i] * a2 / (b1 * b2) - s * 2 * mx[i] / b1;
            g_mu[i] = (ds_dmx - 2 * mx[i] * ds_dvx - my[i] * ds_dcxy) * inv_count;
            g_exx[i] = ds_dvx * inv_count;
            g_exy[i] = ds_dcxy * inv_count;
        }
        if (!grad) continue;
        const auto bm = detail::blur(g_mu, w, h), bxx = detail::blur(g_exx, w, h), bxy = detail::blur(g_exy, w, h);
        for (std::size_t i = 0; i < n; ++i) (*grad)[i][c] = bm[i] + 2 * x[i] * bxx[i] + y[i] * bxy[i];
    }
    return total * inv_count;
}

/// (1 − λ)·mean|a − b| + λ·(1 − SSIM(a, b))/2, gradient with respect to a.
inline ImageLoss render_loss(const Image& rendered, const Image& gt, double lambda_dssim = 0.2) {
    if (!rendered.same_shape(gt)) throw ArgumentError("render_loss: image sizes differ");
    if (!(lambda_dssim >= 0.0 && lambda_dssim <= 1.0)) throw ArgumentError("render_loss: lambda_dssim outside [0,1]");
    const std::size_t n = rendered.size();
    const double inv_count = 1.0 / (3.0 * static_cast<double>(n));
    ImageLoss out{0.0, Image(rendered.width(), rendered.height())};
    double l1 = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < 3; ++c) {
            const double d = rendered[i][c] - gt[i][c];
            l1 += std::abs(d);
            out.grad[i][c] = (1.0 - lambda_dssim) * inv_count * (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0);
        }
    out.value = (1.0 - lambda_dssim) * l1 * inv_count;
    if (lambda_dssim > 0.0) {
        Image g;
        const double s = ssim(rendered, gt, &g);
        out.value += lambda_dssim * (1.0 - s) / 2.0;
        for (std::size_t i = 0; i < n; ++i) out.grad[i] += g[i] * (-lambda_dssim / 2.0);
    }
    return out;
}

// Combination ----------------------------------------------------------------------

struct LossWeights {
    double ordinal = 0.1;
    double render = 1.0;
    double dssim = 0.2;

    void validate() const {
        if (!(ordinal >= 0.0) || !(render >= 0.0) || !(dssim >= 0.0 && dssim <= 1.0))
            throw ArgumentError("loss weights must be non-negative (dssim within [0,1])");
    }
};

inline double total_loss(const LossWeights& w, double depth_term, double render_term) {
    w.validate();
    return w.ordinal * depth_term + w.render * render_term;
}

}  // namespace modgs
