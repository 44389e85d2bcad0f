// SPDX-License-Identifier: Apache-2.0
//
// Small fixed-size linear algebra, the pinhole camera, and dense image grids.
//
// Conventions used throughout the library:
//   * pixel centers sit at integer coordinates, (0,0) is the top-left pixel;
//   * depth is the camera-frame z coordinate, not the length of the ray;
//   * a camera pose maps camera coordinates to world coordinates.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "modgs/errors.hpp"

namespace modgs {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    constexpr Vec2& operator+=(const Vec2& o) { x += o.x; y += o.y; return *this; }
    constexpr Vec2& operator-=(const Vec2& o) { x -= o.x; y -= o.y; return *this; }
    constexpr Vec2& operator*=(double s) { x *= s; y *= s; return *this; }
    friend constexpr Vec2 operator+(Vec2 a, const Vec2& b) { return a += b; }
    friend constexpr Vec2 operator-(Vec2 a, const Vec2& b) { return a -= b; }
    friend constexpr Vec2 operator*(Vec2 a, double s) { return a *= s; }
    friend constexpr Vec2 operator*(double s, Vec2 a) { return a *= s; }
    friend constexpr bool operator==(const Vec2&, const Vec2&) = default;
};

inline double norm(const Vec2& v) { return std::hypot(v.x, v.y); }

struct Vec3 {
    double x = 0.0;
    double y = 0.0;
    double z = 0.0;

    constexpr double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
    constexpr Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
    constexpr Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
    constexpr Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
    friend constexpr Vec3 operator+(Vec3 a, const Vec3& b) { return a += b; }
    friend constexpr Vec3 operator-(Vec3 a, const Vec3& b) { return a -= b; }
    friend constexpr Vec3 operator-(const Vec3& a) { return {-a.x, -a.y, -a.z}; }
    friend constexpr Vec3 operator*(Vec3 a, double s) { return a *= s; }
    friend constexpr Vec3 operator*(double s, Vec3 a) { return a *= s; }
    friend constexpr bool operator==(const Vec3&, const Vec3&) = default;
};

constexpr double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
constexpr Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& v) { return std::sqrt(dot(v, v)); }
inline Vec3 normalized(const Vec3& v) { return v * (1.0 / norm(v)); }
inline double max_abs(const Vec3& v) {
    return std::max({std::abs(v.x), std::abs(v.y), std::abs(v.z)});
}

/// Linear RGB color, nominally in [0,1].
struct Rgb {
    double r = 0.0;
    double g = 0.0;
    double b = 0.0;

    constexpr double& operator[](std::size_t i) { return i == 0 ? r : (i == 1 ? g : b); }
    constexpr double operator[](std::size_t i) const { return i == 0 ? r : (i == 1 ? g : b); }
    constexpr Rgb& operator+=(const Rgb& o) { r += o.r; g += o.g; b += o.b; return *this; }
    constexpr Rgb& operator-=(const Rgb& o) { r -= o.r; g -= o.g; b -= o.b; return *this; }
    constexpr Rgb& operator*=(double s) { r *= s; g *= s; b *= s; return *this; }
    friend constexpr Rgb operator+(Rgb a, const Rgb& o) { return a += o; }
    friend constexpr Rgb operator-(Rgb a, const Rgb& o) { return a -= o; }
    friend constexpr Rgb operator*(Rgb a, double s) { return a *= s; }
    friend constexpr Rgb operator*(double s, Rgb a) { return a *= s; }
    friend constexpr bool operator==(const Rgb&, const Rgb&) = default;
};

constexpr double dot(const Rgb& a, const Rgb& b) { return a.r * b.r + a.g * b.g + a.b * b.b; }

static_assert(sizeof(Vec2) == 2 * sizeof(double) && std::is_standard_layout_v<Vec2>);
static_assert(sizeof(Vec3) == 3 * sizeof(double) && std::is_standard_layout_v<Vec3>);
static_assert(sizeof(Rgb) == 3 * sizeof(double) && std::is_standard_layout_v<Rgb>);

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{};

    static constexpr Mat3 identity() { return Mat3{{1, 0, 0, 0, 1, 0, 0, 0, 1}}; }
    static constexpr Mat3 diagonal(const Vec3& d) { return Mat3{{d.x, 0, 0, 0, d.y, 0, 0, 0, d.z}}; }

    constexpr double& operator()(std::size_t r, std::size_t c) { return m[r * 3 + c]; }
    constexpr double operator()(std::size_t r, std::size_t c) const { return m[r * 3 + c]; }

    constexpr Mat3 transposed() const {
        return Mat3{{m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]}};
    }

    friend constexpr Vec3 operator*(const Mat3& a, const Vec3& v) {
        return {a.m[0] * v.x + a.m[1] * v.y + a.m[2] * v.z,
                a.m[3] * v.x + a.m[4] * v.y + a.m[5] * v.z,
                a.m[6] * v.x + a.m[7] * v.y + a.m[8] * v.z};
    }
    friend constexpr Mat3 operator*(const Mat3& a, const Mat3& b) {
        Mat3 out;
        for (std::size_t r = 0; r < 3; ++r)
            for (std::size_t c = 0; c < 3; ++c)
                out(r, c) = a(r, 0) * b(0, c) + a(r, 1) * b(1, c) + a(r, 2) * b(2, c);
        return out;
    }
    friend constexpr Mat3 operator+(Mat3 a, const Mat3& b) {
        for (std::size_t i = 0; i < 9; ++i) a.m[i] += b.m[i];
        return a;
    }
    friend constexpr Mat3 operator*(Mat3 a, double s) {
        for (auto& v : a.m) v *= s;
        return a;
    }
    friend constexpr bool operator==(const Mat3&, const Mat3&) = default;

    constexpr double determinant() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

/// Rotation about a unit axis (Rodrigues).
inline Mat3 axis_angle(const Vec3& axis, double angle) {
    const Vec3 k = normalized(axis);
    const double c = std::cos(angle), s = std::sin(angle), v = 1.0 - c;
    return Mat3{{k.x * k.x * v + c, k.x * k.y * v - k.z * s, k.x * k.z * v + k.y * s,
                 k.y * k.x * v + k.z * s, k.y * k.y * v + c, k.y * k.z * v - k.x * s,
                 k.z * k.x * v - k.y * s, k.z * k.y * v + k.x * s, k.z * k.z * v + c}};
}

/// ‖RᵀR − I‖∞
inline double orthonormality_error(const Mat3& r) {
    const Mat3 p = r.transposed() * r;
    const Mat3 id = Mat3::identity();
    double e = 0.0;
    for (std::size_t i = 0; i < 9; ++i) e = std::max(e, std::abs(p.m[i] - id.m[i]));
    return e;
}

/// x ↦ R·x + t
struct RigidTransform {
    Mat3 rotation = Mat3::identity();
    Vec3 translation{};

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transposed();
        return {rt, -(rt * translation)};
    }

    friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
        return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
    }
    friend bool operator==(const RigidTransform&, const RigidTransform&) = default;
};

/// Camera looking from `eye` toward `target`; camera y points roughly along -`up`.
inline RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up = {0, -1, 0}) {
    const Vec3 z = normalized(target - eye);
    const Vec3 x = normalized(cross(z, up));
    const Vec3 y = cross(z, x);
    RigidTransform pose;
    pose.rotation = Mat3{{x.x, y.x, z.x, x.y, y.y, z.y, x.z, y.z, z.z}};
    pose.translation = eye;
    return pose;
}

struct Projection {
    Vec2 pixel;
    double depth = 0.0;
};

/// Pinhole camera with a world-from-camera pose.
class Camera {
public:
    Camera() = default;

    Camera(double fx, double fy, double cx, double cy, int width, int height,
           RigidTransform pose = {})
        : fx_(fx), fy_(fy), cx_(cx), cy_(cy), width_(width), height_(height), pose_(pose),
          pose_inv_(pose.inverse()) {
        if (!(fx > 0.0) || !(fy > 0.0)) throw DomainError("camera: focal lengths must be positive");
        if (width <= 0 || height <= 0) throw DomainError("camera: image size must be positive");
        if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
            throw DomainError("camera: principal point outside the image");
        if (orthonormality_error(pose.rotation) >= 1e-9 || pose.rotation.determinant() <= 0.0)
            throw DomainError("camera: pose rotation is not a proper rotation");
    }

    double fx() const { return fx_; }
    double fy() const { return fy_; }
    double cx() const { return cx_; }
    double cy() const { return cy_; }
    int width() const { return width_; }
    int height() const { return height_; }
    const RigidTransform& pose() const { return pose_; }
    /// camera-from-world
    const RigidTransform& view() const { return pose_inv_; }

    Camera with_pose(const RigidTransform& pose) const {
        return Camera(fx_, fy_, cx_, cy_, width_, height_, pose);
    }

    bool in_bounds(const Vec2& p) const {
        return p.x >= 0.0 && p.y >= 0.0 && p.x <= width_ - 1 && p.y <= height_ - 1;
    }

    Vec3 unproject(const Vec2& pixel, double depth) const {
        if (!(depth > 0.0) || !std::isfinite(depth))
            throw DomainError("unproject: depth must be positive and finite");
        const Vec3 local{(pixel.x - cx_) * depth / fx_, (pixel.y - cy_) * depth / fy_, depth};
        return pose_.apply(local);
    }

    Projection project(const Vec3& world) const {
        const Vec3 c = pose_inv_.apply(world);
        if (c.z <= 1e-9) throw DomainError("project: point is behind the camera");
        return {{fx_ * c.x / c.z + cx_, fy_ * c.y / c.z + cy_}, c.z};
    }

    friend bool operator==(const Camera& a, const Camera& b) {
        return a.fx_ == b.fx_ && a.fy_ == b.fy_ && a.cx_ == b.cx_ && a.cy_ == b.cy_ &&
               a.width_ == b.width_ && a.height_ == b.height_ && a.pose_ == b.pose_;
    }

private:
    double fx_ = 1.0, fy_ = 1.0, cx_ = 0.0, cy_ = 0.0;
    int width_ = 1, height_ = 1;
    RigidTransform pose_{};
    RigidTransform pose_inv_{};
};

/// Dense row-major image-shaped container.
template <class V>
class Grid2D {
public:
    using value_type = V;

    Grid2D() = default;
    Grid2D(int width, int height, V fill = V{})
        : width_(width), height_(height),
          data_(static_cast<std::size_t>(checked_area(width, height)), fill) {}
    Grid2D(int width, int height, std::vector<V> data)
        : width_(width), height_(height), data_(std::move(data)) {
        if (data_.size() != static_cast<std::size_t>(checked_area(width, height)))
            throw ArgumentError("grid: data length does not match width x height");
    }

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    V& operator()(int x, int y) { return data_[index(x, y)]; }
    const V& operator()(int x, int y) const { return data_[index(x, y)]; }
    V& operator[](std::size_t i) { return data_[i]; }
    const V& operator[](std::size_t i) const { return data_[i]; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }
    Vec2 pixel(std::size_t i) const {
        return {static_cast<double>(i % static_cast<std::size_t>(width_)),
                static_cast<double>(i / static_cast<std::size_t>(width_))};
    }

    std::vector<V>& data() { return data_; }
    const std::vector<V>& data() const { return data_; }

    bool same_shape(int w, int h) const { return w == width_ && h == height_; }
    template <class U>
    bool same_shape(const Grid2D<U>& o) const { return same_shape(o.width(), o.height()); }

    friend bool operator==(const Grid2D&, const Grid2D&) = default;

private:
    static long checked_area(int w, int h) {
        if (w < 0 || h < 0) throw ArgumentError("grid: negative size");
        return static_cast<long>(w) * h;
    }

    int width_ = 0;
    int height_ = 0;
    std::vector<V> data_;
};

using DepthMap = Grid2D<double>;
using Image = Grid2D<Rgb>;
using Mask = Grid2D<std::uint8_t>;
using Flow2D = Grid2D<Vec2>;

inline std::size_t count_valid(const Mask& m) {
    std::size_t n = 0;
    for (auto v : m.data()) n += v != 0;
    return n;
}

/// Bilinear interpolation; exact at integer pixel positions.
template <class V>
V bilinear_sample(const Grid2D<V>& grid, const Vec2& p) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= grid.width() - 1 && p.y <= grid.height() - 1)) {
        std::ostringstream os;
        os << "bilinear_sample: pixel (" << p.x << ", " << p.y << ") outside "
           << grid.width() << "x" << grid.height() << " grid";
        throw RangeError(os.str());
    }
    const int x0 = static_cast<int>(std::floor(p.x));
    const int y0 = static_cast<int>(std::floor(p.y));
    const double ax = p.x - x0;
    const double ay = p.y - y0;
    const int x1 = ax > 0.0 ? x0 + 1 : x0;
    const int y1 = ay > 0.0 ? y0 + 1 : y0;
    if (ax == 0.0 && ay == 0.0) return grid(x0, y0);
    const V top = grid(x0, y0) * (1.0 - ax) + grid(x1, y0) * ax;
    const V bottom = grid(x0, y1) * (1.0 - ax) + grid(x1, y1) * ax;
    if (ay == 0.0) return top;
    return top * (1.0 - ay) + bottom * ay;
}

/// Bilinear interpolation that refuses to mix in invalid neighbors: every
/// neighbor with non-zero weight must be valid. Returns false otherwise.
template <class V>
bool bilinear_sample_masked(const Grid2D<V>& grid, const Mask& mask, const Vec2& p, V& out) {
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= grid.width() - 1 && p.y <= grid.height() - 1))
        return false;
    const int x0 = static_cast<int>(std::floor(p.x));
    const int y0 = static_cast<int>(std::floor(p.y));
    const int x1 = p.x > x0 ? x0 + 1 : x0;
    const int y1 = p.y > y0 ? y0 + 1 : y0;
    if (!mask(x0, y0) || !mask(x1, y0) || !mask(x0, y1) || !mask(x1, y1)) return false;
    out = bilinear_sample(grid, p);
    return true;
}

/// Everything known about one timestamp of the input video.
struct FrameBundle {
    double t = 0.0;
    Image image;
    DepthMap depth;
    Mask mask;
    Camera camera;

    void validate() const {
        if (!(t >= 0.0 && t <= 1.0)) throw DomainError("frame: time must lie in [0,1]");
        const int w = camera.width(), h = camera.height();
        if (!image.same_shape(w, h) || !depth.same_shape(w, h) || !mask.same_shape(w, h))
            throw ArgumentError("frame: image/depth/mask size differs from camera");
        for (std::size_t i = 0; i < mask.size(); ++i)
            if (mask[i] && !(std::isfinite(depth[i]) && depth[i] > 0.0))
                throw DomainError("frame: valid pixel with non-positive depth");
    }
};

/// Dense optical flow from frame `from` to frame `to`, with per-pixel validity.
struct FlowField {
    int from = 0;
    int to = 0;
    Flow2D flow;
    Mask valid;
};

}  // namespace modgs
