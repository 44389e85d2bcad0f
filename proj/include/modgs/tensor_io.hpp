// SPDX-License-Identifier: Apache-2.0
//
// MDT tensor files: an ASCII header line `MDT <dtype> <ndim> <d0> <d1> ...\n`
// followed by the row-major little-endian payload. dtype is one of f32, u8 or
// f64 (the last is used by checkpoints, which must round-trip losslessly).
// Also PPM/PGM export for quick inspection.
#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "modgs/errors.hpp"
#include "modgs/geometry.hpp"

namespace modgs {

enum class DType { f32, f64, u8 };

inline const char* dtype_name(DType d) {
    switch (d) {
        case DType::f32: return "f32";
        case DType::f64: return "f64";
        case DType::u8: return "u8";
    }
    return "?";
}

struct Tensor {
    std::vector<std::size_t> shape;
    std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint8_t>> data;

    DType dtype() const { return static_cast<DType>(data.index()); }

    std::size_t numel() const {
        std::size_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }

    std::size_t stored() const {
        return std::visit([](const auto& v) { return v.size(); }, data);
    }

    /// Element i widened to double.
    double at(std::size_t i) const {
        return std::visit([i](const auto& v) { return static_cast<double>(v[i]); }, data);
    }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

namespace detail {

template <class T>
void write_le(std::ostream& os, const std::vector<T>& v) {
    if constexpr (std::endian::native == std::endian::little || sizeof(T) == 1) {
        os.write(reinterpret_cast<const char*>(v.data()),
                 static_cast<std::streamsize>(v.size() * sizeof(T)));
    } else {
        for (const T& x : v) {
            char b[sizeof(T)];
            std::memcpy(b, &x, sizeof(T));
            std::reverse(b, b + sizeof(T));
            os.write(b, sizeof(T));
        }
    }
}

template <class T>
void read_le(std::istream& is, std::vector<T>& v, std::size_t n) {
    v.resize(n);
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)));
    if (static_cast<std::size_t>(is.gcount()) != n * sizeof(T))
        throw FormatError("MDT: truncated payload");
    if constexpr (std::endian::native != std::endian::little && sizeof(T) > 1) {
        for (T& x : v) {
            char b[sizeof(T)];
            std::memcpy(b, &x, sizeof(T));
            std::reverse(b, b + sizeof(T));
            std::memcpy(&x, b, sizeof(T));
        }
    }
}

}  // namespace detail

inline void write_mdt(std::ostream& os, const Tensor& t) {
    if (t.stored() != t.numel()) throw ArgumentError("MDT: payload length does not match shape");
    os << "MDT " << dtype_name(t.dtype()) << ' ' << t.shape.size();
    for (auto d : t.shape) os << ' ' << d;
    os << '\n';
    std::visit([&os](const auto& v) { detail::write_le(os, v); }, t.data);
}

inline Tensor read_mdt(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw FormatError("MDT: missing header");
    std::istringstream hs(line);
    std::string magic, dtype;
    std::size_t ndim = 0;
    if (!(hs >> magic >> dtype >> ndim) || magic != "MDT")
        throw FormatError("MDT: malformed header '" + line + "'");
    if (ndim > 8) throw FormatError("MDT: too many dimensions");
    Tensor t;
    t.shape.resize(ndim);
    for (auto& d : t.shape)
        if (!(hs >> d)) throw FormatError("MDT: malformed shape in header '" + line + "'");
    const std::size_t n = t.numel();
    if (dtype == "f32") {
        std::vector<float> v;
        detail::read_le(is, v, n);
        t.data = std::move(v);
    } else if (dtype == "f64") {
        std::vector<double> v;
        detail::read_le(is, v, n);
        t.data = std::move(v);
    } else if (dtype == "u8") {
        std::vector<std::uint8_t> v;
        detail::read_le(is, v, n);
        t.data = std::move(v);
    } else {
        throw FormatError("MDT: unknown dtype '" + dtype + "'");
    }
    return t;
}

inline void save_mdt(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    write_mdt(os, t);
    if (!os) throw FormatError("write failed for '" + path.string() + "'");
}

inline Tensor load_mdt(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open '" + path.string() + "'");
    try {
        return read_mdt(is);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// Grid <-> tensor. Scalars are (H,W), vector-valued grids (H,W,C).

namespace detail {

template <class V>
constexpr std::size_t channels() {
    if constexpr (std::is_same_v<V, Vec2>) return 2;
    else if constexpr (std::is_same_v<V, Vec3> || std::is_same_v<V, Rgb>) return 3;
    else return 1;
}

template <class V>
double component(const V& v, std::size_t c) {
    if constexpr (std::is_same_v<V, Vec2>) return c == 0 ? v.x : v.y;
    else if constexpr (channels<V>() == 3) return v[c];
    else return static_cast<double>(v);
}

template <class V>
void set_component(V& v, std::size_t c, double x) {
    if constexpr (std::is_same_v<V, Vec2>) (c == 0 ? v.x : v.y) = x;
    else if constexpr (channels<V>() == 3) v[c] = x;
    else v = static_cast<V>(x);
}

}  // namespace detail

template <class V>
Tensor to_tensor(const Grid2D<V>& g, DType dtype) {
    constexpr std::size_t C = detail::channels<V>();
    Tensor t;
    t.shape = {static_cast<std::size_t>(g.height()), static_cast<std::size_t>(g.width())};
    if (C > 1) t.shape.push_back(C);
    auto fill = [&](auto& out) {
        using T = typename std::decay_t<decltype(out)>::value_type;
        out.resize(g.size() * C);
        for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t c = 0; c < C; ++c)
                out[i * C + c] = static_cast<T>(detail::component(g[i], c));
    };
    switch (dtype) {
        case DType::f32: { std::vector<float> v; fill(v); t.data = std::move(v); break; }
        case DType::f64: { std::vector<double> v; fill(v); t.data = std::move(v); break; }
        case DType::u8: { std::vector<std::uint8_t> v; fill(v); t.data = std::move(v); break; }
    }
    return t;
}

template <class V>
Grid2D<V> from_tensor(const Tensor& t) {
    constexpr std::size_t C = detail::channels<V>();
    const bool ok = (C == 1 && t.shape.size() == 2) ||
                    (C > 1 && t.shape.size() == 3 && t.shape[2] == C);
    if (!ok) throw FormatError("MDT: tensor shape does not match the expected grid layout");
    Grid2D<V> g(static_cast<int>(t.shape[1]), static_cast<int>(t.shape[0]));
    for (std::size_t i = 0; i < g.size(); ++i)
        for (std::size_t c = 0; c < C; ++c) detail::set_component(g[i], c, t.at(i * C + c));
    return g;
}

inline std::uint8_t to_byte(double v) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<std::uint8_t>(std::lround(c * 255.0));
}

/// Binary PPM (P6, maxval 255); values clamped to [0,1].
inline void save_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "P6\n" << img.width() << ' ' << img.height() << "\n255\n";
    for (const Rgb& c : img.data()) {
        const char px[3] = {static_cast<char>(to_byte(c.r)), static_cast<char>(to_byte(c.g)),
                            static_cast<char>(to_byte(c.b))};
        os.write(px, 3);
    }
}

/// Binary PGM (P5) after min-max normalization over the masked pixels
/// (all pixels when `mask` is null); unmasked pixels are written black.
inline void save_pgm(const std::filesystem::path& path, const DepthMap& depth,
                     const Mask* mask = nullptr) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < depth.size(); ++i) {
        if (mask && !(*mask)[i]) continue;
        lo = std::min(lo, depth[i]);
        hi = std::max(hi, depth[i]);
    }
    const double range = hi > lo ? hi - lo : 1.0;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open '" + path.string() + "' for writing");
    os << "P5\n" << depth.width() << ' ' << depth.height() << "\n255\n";
    for (std::size_t i = 0; i < depth.size(); ++i) {
        const bool valid = !mask || (*mask)[i];
        const char v = static_cast<char>(valid ? to_byte((depth[i] - lo) / range) : 0);
        os.write(&v, 1);
    }
}

}  // namespace modgs
