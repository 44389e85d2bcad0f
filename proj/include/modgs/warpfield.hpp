// SPDX-License-Identifier: Apache-2.0
//
// Time-conditioned invertible deformation field built from affine coupling
// blocks. Block k keeps two coordinates fixed ("passive") and rescales and
// shifts the third ("active"); the active axis cycles x, y, z. A small
// perceptron reads the passive coordinates and a sinusoidal embedding of t and
// emits the log-scale and translation, so every block inverts in closed form:
//
//   forward:  y_a = x_a · exp(s) + τ        inverse:  x_a = (y_a − τ) · exp(−s)
//
// with s = c · tanh(raw / c) so |s| < c and the map stays bi-Lipschitz.
//
// Gradients are hand-derived; every backward routine is checked against
// central differences in the tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/flow_lift.hpp"
#include "modgs/geometry.hpp"
#include "modgs/random.hpp"

namespace modgs {

struct WarpConfig {
    int blocks = 6;
    int hidden = 128;
    int time_freqs = 6;
    double clamp = 3.0;

    friend bool operator==(const WarpConfig&, const WarpConfig&) = default;
};

namespace detail {

// out[b, :] = bias + x[b, :] · W   with W stored (in × out) row-major
inline void dense_forward(const double* __restrict x, std::size_t rows, std::size_t in,
                          const double* __restrict w, const double* __restrict bias, std::size_t out_dim,
                          double* __restrict out) {
    for (std::size_t b = 0; b < rows; ++b) {
        double* __restrict o = out + b * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) o[j] = bias[j];
        const double* xr = x + b * in;
        for (std::size_t k = 0; k < in; ++k) {
            const double xk = xr[k];
            const double* __restrict wr = w + k * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) o[j] += xk * wr[j];
        }
    }
}

// tanh through a single exp; std::tanh near zero where 1 − e^{−2|x|} cancels.
// Relative error stays below 1e-13.
inline double fast_tanh(double x) {
    const double ax = std::abs(x);
    if (ax < 1e-3) return std::tanh(x);
    const double e = std::exp(-2.0 * ax);
    return std::copysign((1.0 - e) / (1.0 + e), x);
}

// Σ_j a[j]·b[j] with four interleaved partial sums (fixed order, so results
// do not depend on the build's vector width).
inline double dot4(const double* __restrict a, const double* __restrict b, std::size_t n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    std::size_t j = 0;
    for (; j + 4 <= n; j += 4) {
        s0 += a[j] * b[j];
        s1 += a[j + 1] * b[j + 1];
        s2 += a[j + 2] * b[j + 2];
        s3 += a[j + 3] * b[j + 3];
    }
    for (; j < n; ++j) s0 += a[j] * b[j];
    return (s0 + s1) + (s2 + s3);
}

// gw += xᵀ·g ; gb += Σ_b g (skipped when null) ; gx = g · Wᵀ (first `gx_cols` input columns only)
inline void dense_backward(const double* __restrict x, std::size_t rows, std::size_t in,
                           const double* __restrict w, std::size_t out_dim, const double* __restrict g,
                           double* __restrict gw, double* __restrict gb, double* __restrict gx,
                           std::size_t gx_cols) {
    for (std::size_t b = 0; b < rows; ++b) {
        const double* gr = g + b * out_dim;
        const double* xr = x + b * in;
        if (gb)
            for (std::size_t j = 0; j < out_dim; ++j) gb[j] += gr[j];
        for (std::size_t k = 0; k < in; ++k) {
            const double xk = xr[k];
            double* __restrict gwr = gw + k * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) gwr[j] += xk * gr[j];
        }
        if (gx)
            for (std::size_t k = 0; k < gx_cols; ++k) gx[b * gx_cols + k] = dot4(w + k * out_dim, gr, out_dim);
    }
}

}  // namespace detail

class WarpField {
public:
    /// Activations recorded by a batched pass, consumed by the matching backward.
    struct Tape {
        struct Block {
            std::vector<double> passive;  // rows × 2
            std::vector<double> h1, h2;   // rows × hidden
            std::vector<double> raw;      // rows × 2    (pre-clamp log-scale, translation)
            std::vector<double> active;   // rows        (active coordinate on the x side)
        };
        std::vector<Block> blocks;
        std::vector<double> time_embedding;  // 1 or rows × (input_dim − 2)
        std::size_t rows = 0;
    };

    explicit WarpField(WarpConfig cfg = {}) : cfg_(cfg) {
        if (cfg.blocks < 1 || cfg.hidden < 1 || cfg.time_freqs < 0 || !(cfg.clamp > 0.0))
            throw ArgumentError("warpfield: invalid configuration");
        params_.assign(static_cast<std::size_t>(cfg.blocks) * block_size(), 0.0);
    }

    /// Hidden layers uniform in ±hidden_scale, output layers zero: exactly the
    /// identity map, but with live hidden units.
    static WarpField near_identity(WarpConfig cfg, std::uint64_t seed, double hidden_scale = 1e-2) {
        WarpField f(cfg);
        Rng rng = make_rng(seed, 0x3A9);
        for (int b = 0; b < cfg.blocks; ++b) {
            const Layout l = f.layout(b);
            for (std::size_t i = l.w1; i < l.w3; ++i) f.params_[i] = uniform(rng, -hidden_scale, hidden_scale);
        }
        return f;
    }

    /// Default dense-layer initialization of common deep-learning frameworks:
    /// weights and biases uniform in ±1/sqrt(fan_in). Not an identity map.
    static WarpField kaiming(WarpConfig cfg, std::uint64_t seed) {
        WarpField f(cfg);
        Rng rng = make_rng(seed, 0x3AB);
        const double in = static_cast<double>(f.input_dim()), h = static_cast<double>(cfg.hidden);
        for (int b = 0; b < cfg.blocks; ++b) {
            const Layout l = f.layout(b);
            auto fill = [&](std::size_t from, std::size_t to, double fan_in) {
                const double bound = 1.0 / std::sqrt(fan_in);
                for (std::size_t i = from; i < to; ++i) f.params_[i] = uniform(rng, -bound, bound);
            };
            fill(l.w1, l.w2, in);
            fill(l.w2, l.w3, h);
            fill(l.w3, l.end, h);
        }
        return f;
    }

    /// Every parameter uniform in ±scale.
    static WarpField random(WarpConfig cfg, std::uint64_t seed, double scale) {
        WarpField f(cfg);
        Rng rng = make_rng(seed, 0x3AA);
        for (double& p : f.params_) p = uniform(rng, -scale, scale);
        return f;
    }

    const WarpConfig& config() const { return cfg_; }
    std::span<double> params() { return params_; }
    std::span<const double> params() const { return params_; }
    std::size_t num_params() const { return params_.size(); }
    std::size_t input_dim() const { return 3 + 2 * static_cast<std::size_t>(cfg_.time_freqs); }

    static int active_axis(int block) { return block % 3; }

    /// Sets block `b`'s output layer so it emits a constant log-scale and translation.
    void freeze_block_output(int b, double log_scale, double translation) {
        const Layout l = layout(b);
        std::fill(params_.begin() + static_cast<std::ptrdiff_t>(l.w3),
                  params_.begin() + static_cast<std::ptrdiff_t>(l.end), 0.0);
        params_[l.b3] = log_scale;
        params_[l.b3 + 1] = translation;
    }

    Vec3 forward(const Vec3& x, double t) const {
        Vec3 out;
        forward_batch(std::span(&x, 1), std::span(&t, 1), std::span(&out, 1), nullptr);
        return out;
    }

    Vec3 inverse(const Vec3& x, double t) const {
        Vec3 out;
        inverse_batch(std::span(&x, 1), std::span(&t, 1), std::span(&out, 1), nullptr);
        return out;
    }

    /// T_{t_j} ∘ T_{t_i}^{-1}
    Vec3 transport(const Vec3& x, double t_i, double t_j) const {
        return forward(inverse(x, t_i), t_j);
    }

    /// `times` holds either one time per point or a single shared time.
    void forward_batch(std::span<const Vec3> x, std::span<const double> times, std::span<Vec3> out,
                       Tape* tape) const {
        run_batch(x, times, out, tape, /*inverse=*/false);
    }

    void inverse_batch(std::span<const Vec3> x, std::span<const double> times, std::span<Vec3> out,
                       Tape* tape) const {
        run_batch(x, times, out, tape, /*inverse=*/true);
    }

    /// Backpropagates through a recorded forward pass. `grad_x` (may be empty)
    /// receives d/d(input); `grad_params` is accumulated into.
    void forward_backward(const Tape& tape, std::span<const Vec3> grad_out, std::span<Vec3> grad_x,
                          std::span<double> grad_params) const {
        backward_batch(tape, grad_out, grad_x, grad_params, /*inverse=*/false);
    }

    void inverse_backward(const Tape& tape, std::span<const Vec3> grad_out, std::span<Vec3> grad_x,
                          std::span<double> grad_params) const {
        backward_batch(tape, grad_out, grad_x, grad_params, /*inverse=*/true);
    }

    /// Mean squared transport error over the batch and its parameter gradient
    /// (accumulated into `grad`, which must be sized num_params()).
    double init_loss_and_grad(std::span<const FlowPair3D> batch, std::span<double> grad) const {
        if (batch.empty()) throw ArgumentError("init_loss_and_grad: empty batch");
        if (grad.size() != params_.size()) throw ArgumentError("init_loss_and_grad: gradient size mismatch");
        const std::size_t n = batch.size();
        std::vector<Vec3> xi(n), canon(n), xj(n);
        std::vector<double> ti(n), tj(n);
        for (std::size_t k = 0; k < n; ++k) {
            xi[k] = batch[k].x_i;
            ti[k] = batch[k].t_i;
            tj[k] = batch[k].t_j;
        }
        Tape inv_tape, fwd_tape;
        inverse_batch(xi, ti, canon, &inv_tape);
        forward_batch(canon, tj, xj, &fwd_tape);
        double loss = 0.0;
        std::vector<Vec3> g(n);
        const double inv_n = 1.0 / static_cast<double>(n);
        for (std::size_t k = 0; k < n; ++k) {
            const Vec3 r = xj[k] - batch[k].x_j;
            loss += dot(r, r);
            g[k] = r * (2.0 * inv_n);
        }
        std::vector<Vec3> g_canon(n);
        forward_backward(fwd_tape, g, g_canon, grad);
        inverse_backward(inv_tape, g_canon, {}, grad);
        return loss * inv_n;
    }

    double init_loss(std::span<const FlowPair3D> batch) const {
        if (batch.empty()) throw ArgumentError("init_loss: empty batch");
        double loss = 0.0;
        for (const auto& p : batch) {
            const Vec3 r = transport(p.x_i, p.t_i, p.t_j) - p.x_j;
            loss += dot(r, r);
        }
        return loss / static_cast<double>(batch.size());
    }

private:
    struct Layout {
        std::size_t w1, b1, w2, b2, w3, b3, end;
    };

    std::size_t block_size() const {
        const auto in = input_dim(), h = static_cast<std::size_t>(cfg_.hidden);
        return in * h + h + h * h + h + h * 2 + 2;
    }

    Layout layout(int b) const {
        const auto in = input_dim(), h = static_cast<std::size_t>(cfg_.hidden);
        Layout l{};
        l.w1 = static_cast<std::size_t>(b) * block_size();
        l.b1 = l.w1 + in * h;
        l.w2 = l.b1 + h;
        l.b2 = l.w2 + h * h;
        l.w3 = l.b2 + h;
        l.b3 = l.w3 + h * 2;
        l.end = l.b3 + 2;
        return l;
    }

    void embed_time(double t, double* out) const {
        out[0] = t;
        double freq = 3.141592653589793;
        for (int k = 0; k < cfg_.time_freqs; ++k, freq *= 2.0) {
            out[1 + 2 * k] = std::sin(freq * t);
            out[2 + 2 * k] = std::cos(freq * t);
        }
    }

    static void check_time(double t) {
        if (!(t >= 0.0 && t <= 1.0))
            throw ArgumentError("warpfield: time " + std::to_string(t) + " outside [0,1]");
    }

    void run_batch(std::span<const Vec3> x, std::span<const double> times, std::span<Vec3> out,
                   Tape* tape, bool inverse) const {
        const std::size_t n = x.size();
        if (out.size() != n) throw ArgumentError("warpfield: output size mismatch");
        if (times.size() != n && times.size() != 1) throw ArgumentError("warpfield: need one time per point or one shared time");
        for (double t : times) check_time(t);

        const std::size_t in = input_dim(), h = static_cast<std::size_t>(cfg_.hidden);
        std::vector<double> emb(times.size() * (in - 2));
        for (std::size_t k = 0; k < times.size(); ++k) embed_time(times[k], emb.data() + k * (in - 2));

        std::vector<Vec3> cur(x.begin(), x.end());
        Tape local;
        Tape& tp = tape ? *tape : local;
        tp.rows = n;
        tp.blocks.assign(static_cast<std::size_t>(cfg_.blocks), {});
        tp.time_embedding = std::move(emb);

        std::vector<double> scratch_in, scratch_h1, scratch_h2, scratch_raw, time_bias;
        for (int step = 0; step < cfg_.blocks; ++step) {
            const int b = inverse ? cfg_.blocks - 1 - step : step;
            const int a = active_axis(b);
            const int p0 = (a + 1) % 3, p1 = (a + 2) % 3;
            const Layout l = layout(b);
            auto& tb = tp.blocks[static_cast<std::size_t>(b)];
            // with a tape the activations are written straight into it
            auto& passive = tape ? tb.passive : scratch_in;
            auto& h1 = tape ? tb.h1 : scratch_h1;
            auto& h2 = tape ? tb.h2 : scratch_h2;
            auto& raw = tape ? tb.raw : scratch_raw;
            passive.resize(n * 2);
            h1.resize(n * h);
            h2.resize(n * h);
            raw.resize(n * 2);
            for (std::size_t r = 0; r < n; ++r) {
                passive[2 * r] = cur[r][static_cast<std::size_t>(p0)];
                passive[2 * r + 1] = cur[r][static_cast<std::size_t>(p1)];
            }
            evaluate_conditioner(l, passive.data(), tp.time_embedding.data(), times.size(), n, time_bias,
                                 h1.data(), h2.data(), raw.data());
            tb.active.resize(n);
            for (std::size_t r = 0; r < n; ++r) {
                const double s = cfg_.clamp * std::tanh(raw[2 * r] / cfg_.clamp);
                const double tau = raw[2 * r + 1];
                double& v = cur[r][static_cast<std::size_t>(a)];
                if (inverse) {
                    v = (v - tau) * std::exp(-s);
                    tb.active[r] = v;
                } else {
                    tb.active[r] = v;
                    v = v * std::exp(s) + tau;
                }
            }
        }
        std::copy(cur.begin(), cur.end(), out.begin());
    }

    // The time embedding enters the first layer as a per-time bias, computed
    // once when all rows share a time. Both cases add terms in the same order.
    void evaluate_conditioner(const Layout& l, const double* passive, const double* emb,
                              std::size_t time_rows, std::size_t rows, std::vector<double>& time_bias,
                              double* h1, double* h2, double* raw) const {
        const std::size_t in = input_dim(), h = static_cast<std::size_t>(cfg_.hidden);
        const double* p = params_.data();
        time_bias.resize(time_rows * h);
        detail::dense_forward(emb, time_rows, in - 2, p + l.w1 + 2 * h, p + l.b1, h, time_bias.data());
        for (std::size_t r = 0; r < rows; ++r) {
            const double* bias = time_bias.data() + (time_rows == 1 ? 0 : r * h);
            detail::dense_forward(passive + 2 * r, 1, 2, p + l.w1, bias, h, h1 + r * h);
        }
        for (std::size_t i = 0; i < rows * h; ++i) h1[i] = detail::fast_tanh(h1[i]);
        detail::dense_forward(h1, rows, h, p + l.w2, p + l.b2, h, h2);
        for (std::size_t i = 0; i < rows * h; ++i) h2[i] = detail::fast_tanh(h2[i]);
        detail::dense_forward(h2, rows, h, p + l.w3, p + l.b3, 2, raw);
    }

    void backward_batch(const Tape& tape, std::span<const Vec3> grad_out, std::span<Vec3> grad_x,
                        std::span<double> grad_params, bool inverse) const {
        const std::size_t n = tape.rows;
        if (grad_out.size() != n || (!grad_x.empty() && grad_x.size() != n))
            throw ArgumentError("warpfield backward: size mismatch");
        if (grad_params.size() != params_.size())
            throw ArgumentError("warpfield backward: parameter gradient size mismatch");
        const std::size_t in = input_dim(), h = static_cast<std::size_t>(cfg_.hidden);
        const double c = cfg_.clamp;
        std::vector<Vec3> g(grad_out.begin(), grad_out.end());
        std::vector<double> d_raw(n * 2), d_h2(n * h), d_h1(n * h), d_in(n * 2), col_sum(h);
        const std::size_t time_rows = tape.time_embedding.size() / (in - 2);

        // Walk the blocks in the reverse of the order they were applied.
        for (int step = cfg_.blocks - 1; step >= 0; --step) {
            const int b = inverse ? cfg_.blocks - 1 - step : step;
            const int a = active_axis(b);
            const int p0 = (a + 1) % 3, p1 = (a + 2) % 3;
            const Layout l = layout(b);
            const auto& tb = tape.blocks[static_cast<std::size_t>(b)];
            for (std::size_t r = 0; r < n; ++r) {
                const double th = std::tanh(tb.raw[2 * r] / c);
                const double s = c * th;
                const double ds_draw = 1.0 - th * th;
                double& ga = g[r][static_cast<std::size_t>(a)];
                double d_s, d_tau;
                if (inverse) {
                    // x_a = (y_a − τ)·e^{−s};  tb.active holds x_a
                    const double e = std::exp(-s);
                    d_s = -ga * tb.active[r];
                    d_tau = -ga * e;
                    ga *= e;
                } else {
                    // y_a = x_a·e^{s} + τ;  tb.active holds x_a
                    const double e = std::exp(s);
                    d_s = ga * tb.active[r] * e;
                    d_tau = ga;
                    ga *= e;
                }
                d_raw[2 * r] = d_s * ds_draw;
                d_raw[2 * r + 1] = d_tau;
            }
            const double* p = params_.data();
            double* gp = grad_params.data();
            detail::dense_backward(tb.h2.data(), n, h, p + l.w3, 2, d_raw.data(), gp + l.w3, gp + l.b3,
                                   d_h2.data(), h);
            for (std::size_t i = 0; i < n * h; ++i) d_h2[i] *= 1.0 - tb.h2[i] * tb.h2[i];
            detail::dense_backward(tb.h1.data(), n, h, p + l.w2, h, d_h2.data(), gp + l.w2, gp + l.b2,
                                   d_h1.data(), h);
            for (std::size_t i = 0; i < n * h; ++i) d_h1[i] *= 1.0 - tb.h1[i] * tb.h1[i];
            detail::dense_backward(tb.passive.data(), n, 2, p + l.w1, h, d_h1.data(), gp + l.w1,
                                   gp + l.b1, d_in.data(), 2);
            if (time_rows == 1) {
                std::fill(col_sum.begin(), col_sum.end(), 0.0);
                for (std::size_t r = 0; r < n; ++r)
                    for (std::size_t j = 0; j < h; ++j) col_sum[j] += d_h1[r * h + j];
                detail::dense_backward(tape.time_embedding.data(), 1, in - 2, p + l.w1 + 2 * h, h,
                                       col_sum.data(), gp + l.w1 + 2 * h, nullptr, nullptr, 0);
            } else {
                detail::dense_backward(tape.time_embedding.data(), n, in - 2, p + l.w1 + 2 * h, h,
                                       d_h1.data(), gp + l.w1 + 2 * h, nullptr, nullptr, 0);
            }
            for (std::size_t r = 0; r < n; ++r) {
                g[r][static_cast<std::size_t>(p0)] += d_in[2 * r];
                g[r][static_cast<std::size_t>(p1)] += d_in[2 * r + 1];
            }
        }
        if (!grad_x.empty()) std::copy(g.begin(), g.end(), grad_x.begin());
    }

    WarpConfig cfg_;
    std::vector<double> params_;
};

}  // namespace modgs
