// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "modgs/geometry.hpp"
#include "modgs/random.hpp"
#include "modgs/tensor_io.hpp"

using namespace modgs;

namespace {

Camera random_camera(Rng& rng) {
    const int w = 16 + static_cast<int>(uniform_index(rng, 200));
    const int h = 16 + static_cast<int>(uniform_index(rng, 200));
    const Vec3 axis{normal(rng), normal(rng), normal(rng)};
    RigidTransform pose{axis_angle(axis, uniform(rng, -3, 3)),
                        {uniform(rng, -5, 5), uniform(rng, -5, 5), uniform(rng, -5, 5)}};
    return Camera(uniform(rng, 20, 500), uniform(rng, 20, 500), uniform(rng, 0, w - 1), uniform(rng, 0, h - 1), w,
                  h, pose);
}

}  // namespace

TEST(Camera, PrincipalPointUnprojectsOntoOpticalAxis) {
    const Camera c(100, 100, 50, 40, 101, 81);
    const Vec3 p = c.unproject({50, 40}, 3.0);
    EXPECT_EQ(p, (Vec3{0, 0, 3}));
}

TEST(Camera, UnprojectOneFocalLengthRight) {
    const Camera c(100, 120, 50, 40, 101, 81);
    const Vec3 p = c.unproject({150, 40}, 2.0);
    EXPECT_DOUBLE_EQ(p.x, 2.0);
    EXPECT_DOUBLE_EQ(p.y, 0.0);
    EXPECT_DOUBLE_EQ(p.z, 2.0);
}

TEST(Camera, ProjectOnAxisAndOffAxis) {
    const Camera c(100, 100, 50, 40, 101, 81);
    const Projection a = c.project({0, 0, 4});
    EXPECT_EQ(a.pixel, (Vec2{50, 40}));
    EXPECT_EQ(a.depth, 4.0);
    EXPECT_DOUBLE_EQ(c.project({1, 0, 1}).pixel.x, 150.0);
}

TEST(Camera, RejectsBadDepthAndPointsBehind) {
    const Camera c(100, 100, 50, 40, 101, 81);
    EXPECT_THROW(c.unproject({1, 1}, 0.0), DomainError);
    EXPECT_THROW(c.unproject({1, 1}, -2.0), DomainError);
    EXPECT_THROW(c.project({0, 0, -1}), DomainError);
    EXPECT_THROW(c.project({0, 0, 0}), DomainError);
}

TEST(Camera, ValidatesIntrinsicsAndRotation) {
    EXPECT_THROW(Camera(0, 1, 0, 0, 4, 4), DomainError);
    EXPECT_THROW(Camera(1, -1, 0, 0, 4, 4), DomainError);
    EXPECT_THROW(Camera(1, 1, 4, 0, 4, 4), DomainError);
    EXPECT_THROW(Camera(1, 1, 0, -0.5, 4, 4), DomainError);
    RigidTransform reflect;
    reflect.rotation = Mat3::diagonal({1, 1, -1});
    EXPECT_THROW(Camera(1, 1, 0, 0, 4, 4, reflect), DomainError);
    RigidTransform skew;
    skew.rotation(0, 1) = 1e-6;
    EXPECT_THROW(Camera(1, 1, 0, 0, 4, 4, skew), DomainError);
}

TEST(Camera, ProjectUnprojectRoundTripOnRandomCameras) {
    Rng rng = make_rng(11);
    double worst = 0.0;
    for (int k = 0; k < 1000; ++k) {
        const Camera c = random_camera(rng);
        const Vec2 px{uniform(rng, 0, c.width() - 1), uniform(rng, 0, c.height() - 1)};
        const double d = uniform(rng, 0.05, 50);
        const Projection p = c.project(c.unproject(px, d));
        worst = std::max({worst, std::abs(p.pixel.x - px.x), std::abs(p.pixel.y - px.y)});
        EXPECT_NEAR(p.depth, d, 1e-9 * d);
    }
    EXPECT_LT(worst, 1e-9);
}

TEST(RigidTransform, ComposeWithInverseIsIdentity) {
    Rng rng = make_rng(12);
    for (int k = 0; k < 200; ++k) {
        const RigidTransform a{axis_angle({normal(rng), normal(rng), normal(rng)}, uniform(rng, -3, 3)),
                               {uniform(rng, -9, 9), uniform(rng, -9, 9), uniform(rng, -9, 9)}};
        for (const RigidTransform& id : {a * a.inverse(), a.inverse() * a}) {
            for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(id.rotation.m[i], Mat3::identity().m[i], 1e-12);
            EXPECT_LT(max_abs(id.translation), 1e-12 * 10);
        }
    }
}

TEST(RigidTransform, LookAtPointsOpticalAxisAtTarget) {
    const Vec3 eye{0.6, -0.2, 0.2}, target{0, 0, 3};
    const Camera c = Camera(60, 60, 31.5, 31.5, 64, 64).with_pose(look_at(eye, target));
    const Projection p = c.project(target);
    EXPECT_NEAR(p.pixel.x, 31.5, 1e-9);
    EXPECT_NEAR(p.pixel.y, 31.5, 1e-9);
    EXPECT_NEAR(p.depth, norm(target - eye), 1e-12);
    EXPECT_LT(orthonormality_error(c.pose().rotation), 1e-12);
    EXPECT_GT(c.pose().rotation.determinant(), 0.0);
}

TEST(Grid, BilinearExactAtGridPoints) {
    Rng rng = make_rng(13);
    DepthMap g(5, 4);
    for (auto& v : g.data()) v = normal(rng);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 5; ++x)
            EXPECT_EQ(bilinear_sample(g, {static_cast<double>(x), static_cast<double>(y)}), g(x, y));
}

TEST(Grid, BilinearMidpoints) {
    DepthMap g(2, 2, std::vector<double>{0, 1, 3, 3});
    EXPECT_DOUBLE_EQ(bilinear_sample(g, {0.5, 0}), 0.5);
    EXPECT_DOUBLE_EQ(bilinear_sample(g, {0.5, 1}), 3.0);
    EXPECT_DOUBLE_EQ(bilinear_sample(g, {0, 0.5}), 1.5);
    EXPECT_DOUBLE_EQ(bilinear_sample(g, {1, 1}), 3.0);
    EXPECT_DOUBLE_EQ(bilinear_sample(g, {0.5, 0.5}), 1.75);
}

TEST(Grid, BilinearOutOfBoundsIsRangeError) {
    DepthMap g(3, 3, 1.0);
    EXPECT_THROW(bilinear_sample(g, {-0.01, 0}), RangeError);
    EXPECT_THROW(bilinear_sample(g, {0, 2.0001}), RangeError);
    EXPECT_NO_THROW(bilinear_sample(g, {2, 2}));
}

TEST(Grid, MaskedBilinearRefusesInvalidNeighbors) {
    DepthMap g(3, 1, std::vector<double>{1, 2, 3});
    Mask m(3, 1, std::vector<std::uint8_t>{1, 1, 0});
    double out = 0;
    EXPECT_TRUE(bilinear_sample_masked(g, m, {0.5, 0}, out));
    EXPECT_DOUBLE_EQ(out, 1.5);
    EXPECT_TRUE(bilinear_sample_masked(g, m, {1, 0}, out));
    EXPECT_FALSE(bilinear_sample_masked(g, m, {1.5, 0}, out));
    EXPECT_FALSE(bilinear_sample_masked(g, m, {2, 0}, out));
}

TEST(Grid, DataLengthMustMatchShape) {
    EXPECT_THROW(DepthMap(2, 2, std::vector<double>{1, 2, 3}), ArgumentError);
}

TEST(FrameBundle, ValidateChecksTimeShapeAndDepth) {
    FrameBundle f;
    f.camera = Camera(10, 10, 1, 1, 3, 3);
    f.image = Image(3, 3);
    f.depth = DepthMap(3, 3, 1.0);
    f.mask = Mask(3, 3, 1);
    EXPECT_NO_THROW(f.validate());
    f.depth(1, 1) = 0.0;
    EXPECT_THROW(f.validate(), DomainError);
    f.mask(1, 1) = 0;
    EXPECT_NO_THROW(f.validate());
    f.t = 1.5;
    EXPECT_THROW(f.validate(), DomainError);
    f.t = 0.5;
    f.image = Image(2, 3);
    EXPECT_THROW(f.validate(), ArgumentError);
}

TEST(TensorIo, GridRoundTripIsBitExact) {
    Rng rng = make_rng(14);
    Grid2D<double> d(7, 5);
    for (auto& v : d.data()) v = normal(rng);
    Image img(7, 5);
    for (auto& v : img.data()) v = {uniform(rng), uniform(rng), uniform(rng)};
    Flow2D fl(7, 5);
    for (auto& v : fl.data()) v = {normal(rng), normal(rng)};
    Mask m(7, 5);
    for (auto& v : m.data()) v = static_cast<std::uint8_t>(uniform_index(rng, 2));

    auto round_trip = [](const Tensor& t) {
        std::stringstream ss;
        write_mdt(ss, t);
        return read_mdt(ss);
    };
    EXPECT_EQ(from_tensor<double>(round_trip(to_tensor(d, DType::f64))), d);
    EXPECT_EQ(from_tensor<std::uint8_t>(round_trip(to_tensor(m, DType::u8))), m);

    // f32 storage: the stored floats themselves must survive unchanged
    const Tensor ti = to_tensor(img, DType::f32), tf = to_tensor(fl, DType::f32);
    EXPECT_EQ(round_trip(ti), ti);
    EXPECT_EQ(round_trip(tf), tf);
    const Image img32 = from_tensor<Rgb>(ti);
    EXPECT_EQ(from_tensor<Rgb>(round_trip(to_tensor(img32, DType::f32))), img32);
}

TEST(TensorIo, HeaderIsAsciiAndPayloadLittleEndian) {
    Tensor t;
    t.shape = {1, 2};
    t.data = std::vector<float>{1.0f, -2.0f};
    std::stringstream ss;
    write_mdt(ss, t);
    const std::string s = ss.str();
    EXPECT_EQ(s.substr(0, s.find('\n')), "MDT f32 2 1 2");
    const std::string payload = s.substr(s.find('\n') + 1);
    ASSERT_EQ(payload.size(), 8u);
    EXPECT_EQ(static_cast<unsigned char>(payload[3]), 0x3Fu);  // 1.0f = 0x3F800000
    EXPECT_EQ(static_cast<unsigned char>(payload[7]), 0xC0u);  // -2.0f = 0xC0000000
}

TEST(TensorIo, RejectsMalformedInput) {
    std::stringstream bad("MDT f16 1 3\n...");
    EXPECT_THROW(read_mdt(bad), FormatError);
    std::stringstream trunc("MDT u8 1 4\nab");
    EXPECT_THROW(read_mdt(trunc), FormatError);
    std::stringstream magic("XYZ u8 1 1\na");
    EXPECT_THROW(read_mdt(magic), FormatError);
    EXPECT_THROW(from_tensor<Rgb>(to_tensor(DepthMap(2, 2), DType::f32)), FormatError);
}

TEST(TensorIo, PortableImageExports) {
    const auto dir = std::filesystem::temp_directory_path() / "modgs_test_geometry";
    std::filesystem::create_directories(dir);
    Image img(3, 2, Rgb{1, 0.5, 0});
    save_ppm(dir / "a.ppm", img);
    std::ifstream p(dir / "a.ppm", std::ios::binary);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    p >> magic >> w >> h >> maxval;
    EXPECT_EQ(magic, "P6");
    EXPECT_EQ(w, 3);
    EXPECT_EQ(h, 2);
    EXPECT_EQ(maxval, 255);
    p.get();
    char px[3];
    p.read(px, 3);
    EXPECT_EQ(static_cast<unsigned char>(px[0]), 255);
    EXPECT_EQ(static_cast<unsigned char>(px[2]), 0);

    DepthMap d(2, 1, std::vector<double>{1, 3});
    save_pgm(dir / "d.pgm", d, nullptr);
    std::ifstream g(dir / "d.pgm", std::ios::binary);
    g >> magic >> w >> h >> maxval;
    EXPECT_EQ(magic, "P5");
    g.get();
    char v[2];
    g.read(v, 2);
    EXPECT_EQ(static_cast<unsigned char>(v[0]), 0);
    EXPECT_EQ(static_cast<unsigned char>(v[1]), 255);
    std::filesystem::remove_all(dir);
}
