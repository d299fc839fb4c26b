// Copyright Contributors to the atlasgs project
// SPDX-License-Identifier: Apache-2.0

#include "atlasgs/camera.hpp"
#include "atlasgs/config.hpp"
#include "atlasgs/io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace atlasgs;

namespace {

std::filesystem::path temp_path(const std::string &name) {
    auto dir = std::filesystem::temp_directory_path() / "atlasgs_unit";
    std::filesystem::create_directories(dir);
    return dir / name;
}

} // namespace

TEST(Ply, PointCloudRoundTripIsExact) {
    PointCloud c;
    c.points = {{0.1, -0.2, 0.3}, {1.0 / 3.0, 2.0 / 7.0, -5.0 / 11.0}};
    c.colors = {{1.0, 0.0, 0.5}, {0.2, 0.4, 0.6}};
    for (PlyFormat f : {PlyFormat::binary, PlyFormat::ascii}) {
        auto path = temp_path(f == PlyFormat::binary ? "pts_b.ply" : "pts_a.ply");
        write_point_ply(path, c, f);
        PointCloud back = read_point_ply(path);
        ASSERT_EQ(back.size(), 2u);
        if (f == PlyFormat::binary) EXPECT_EQ(back.points, c.points);
        for (std::size_t i = 0; i < 2; ++i)
            for (int k = 0; k < 3; ++k) {
                EXPECT_NEAR(back.points[i][k], c.points[i][k], 1e-12);
                EXPECT_NEAR(back.colors[i][k], c.colors[i][k], 0.5 / 255.0 + 1e-12);
            }
        EXPECT_EQ(ply_vertex_count(path), 2u);
    }
}

TEST(Ply, SplatRoundTrip) {
    Gaussian3D g;
    g.mean = {0.1, 0.2, 0.3};
    g.scale = {0.01, 0.02, 0.5};
    g.rotation = {0.5, 0.5, 0.5, 0.5};
    g.opacity = 0.7;
    g.color = {0.9, 0.1, 0.3};
    auto path = temp_path("splat.ply");
    write_splat_ply(path, {g, g});
    auto back = read_splat_ply(path);
    ASSERT_EQ(back.size(), 2u);
    for (int k = 0; k < 3; ++k) {
        EXPECT_NEAR(back[0].mean[k], g.mean[k], 1e-6);
        EXPECT_NEAR(back[0].scale[k], g.scale[k], 1e-6);
        EXPECT_NEAR(back[0].color[k], g.color[k], 1e-6);
    }
    EXPECT_NEAR(back[0].opacity, 0.7, 1e-6);
    std::ifstream in(path, std::ios::binary);
    std::string header((std::istreambuf_iterator<char>(in)), {});
    for (const char *prop : {"property float x", "property float scale_2", "property float rot_3",
                             "property float opacity", "property float blue", "binary_little_endian"})
        EXPECT_NE(header.find(prop), std::string::npos) << prop;
}

TEST(Ply, MalformedFileNamesPath) {
    auto path = temp_path("bad.ply");
    std::ofstream(path) << "not a ply\n";
    try {
        read_point_ply(path);
        FAIL();
    } catch (const DataError &e) {
        EXPECT_NE(std::string(e.what()).find("bad.ply"), std::string::npos);
    }
}

TEST(Pnm, QuantizationBound) {
    Image img{5, 4, 3, {}};
    for (int i = 0; i < 60; ++i) img.data.push_back(std::fmod(i * 0.137, 1.0));
    auto path = temp_path("img.ppm");
    write_pnm(path, img);
    Image back = read_pnm(path);
    ASSERT_EQ(back.width, 5);
    ASSERT_EQ(back.channels, 3);
    for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_LE(std::abs(back.data[i] - img.data[i]), 1.0 / 255.0);
    Image gray{3, 2, 1, {0, 0.5, 1, 0.25, 0.75, 0.1}};
    write_pnm(temp_path("img.pgm"), gray);
    EXPECT_EQ(read_pnm(temp_path("img.pgm")).channels, 1);
    EXPECT_EQ(quantize8(2.0), 255);
    EXPECT_EQ(quantize8(-1.0), 0);
}

TEST(Camera, JsonRoundTripAndValidation) {
    Camera c = Camera::look_at({2, 0, 1}, {0, 0, 0}, {0, 0, 1}, 50, 50, 64, 48, 0.1, 6);
    Camera d = camera_from_json(camera_to_json(c));
    EXPECT_EQ(d.width, 64);
    EXPECT_EQ(d.height, 48);
    for (int i = 0; i < 12; ++i) EXPECT_NEAR(d.world_to_camera[i], c.world_to_camera[i], 1e-12);
    auto pos = c.position();
    EXPECT_NEAR(pos[0], 2.0, 1e-12);
    EXPECT_NEAR(pos[2], 1.0, 1e-12);
    auto origin = c.to_camera({0, 0, 0});
    EXPECT_NEAR(origin[0], 0.0, 1e-12);
    EXPECT_NEAR(origin[2], std::sqrt(5.0), 1e-12);
    Camera bad = c;
    bad.near = 7;
    EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Config, ParsesKeyValues) {
    auto kv = parse_key_values("# comment\n a = 1 \n\nb=x\na=2\n");
    ASSERT_EQ(kv.size(), 3u);
    EXPECT_EQ(kv[0].first, "a");
    EXPECT_EQ(kv[0].second, "1");
    EXPECT_EQ(kv[1].second, "x");
    EXPECT_THROW(parse_key_values("novalue\n"), ConfigError);
    EXPECT_THROW(parse_size("patches", "-3"), ConfigError);
    EXPECT_EQ(parse_size_list("s", "1,4"), (std::vector<std::size_t>{1, 4}));
    EXPECT_TRUE(parse_bool("b", "true"));
    try {
        parse_double("lambda_kl", "abc");
        FAIL();
    } catch (const ConfigError &e) {
        EXPECT_NE(std::string(e.what()).find("lambda_kl"), std::string::npos);
    }
}
