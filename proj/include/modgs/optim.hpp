// SPDX-License-Identifier: Apache-2.0
//
// Adam with bias correction, and exponential learning-rate decay.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "modgs/errors.hpp"

namespace modgs {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    std::vector<double> m, v;
    std::uint64_t step = 0;

    AdamState() = default;
    explicit AdamState(std::size_t n) : m(n, 0.0), v(n, 0.0) {}

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

inline void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr,
                      const AdamConfig& cfg = {}) {
    if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size())
        throw ArgumentError("adam_step: parameter, gradient and state sizes differ");
    ++state.step;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        const double m_hat = state.m[i] / bc1, v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
}

/// Log-linear interpolation from `start` (step 0) to `end` (step total − 1).
struct ExpSchedule {
    double start = 1e-3;
    double end = 1e-4;

    double at(std::size_t step, std::size_t total) const {
        if (total <= 1) return start;
        const double tau = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
        return std::exp(std::log(start) * (1.0 - tau) + std::log(end) * tau);
    }

    void validate(const char* what) const {
        if (!(start > 0.0) || !(end > 0.0) || end > start)
            throw ArgumentError(std::string(what) + ": learning rates must satisfy 0 < end <= start");
    }

    friend bool operator==(const ExpSchedule&, const ExpSchedule&) = default;
};

/// Views an array of plain aggregates of doubles (Vec3, Rgb, Quat) as doubles.
template <class T>
std::span<double> as_doubles(std::vector<T>& v) {
    static_assert(sizeof(T) % sizeof(double) == 0 && std::is_standard_layout_v<T>);
    return {reinterpret_cast<double*>(v.data()), v.size() * (sizeof(T) / sizeof(double))};
}

template <class T>
std::span<const double> as_doubles(const std::vector<T>& v) {
    static_assert(sizeof(T) % sizeof(double) == 0 && std::is_standard_layout_v<T>);
    return {reinterpret_cast<const double*>(v.data()), v.size() * (sizeof(T) / sizeof(double))};
}

}  // namespace modgs
