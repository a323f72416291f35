#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "cacvit/image.hpp"
#include "cacvit/rng.hpp"

using namespace cacvit;
namespace fs = std::filesystem;

namespace {

std::string temp_path(const char* name) {
    return (fs::temp_directory_path() / name).string();
}

// Scalar reference for one output pixel of half-pixel-center bilinear resize.
double bilinear_oracle(const Image& img, int c, int ox, int oy, int out_w, int out_h) {
    const double sx = static_cast<double>(img.width) / out_w;
    const double sy = static_cast<double>(img.height) / out_h;
    double fx = std::clamp((ox + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
    double fy = std::clamp((oy + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
    const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
    const double wx = fx - x0, wy = fy - y0;
    return (1 - wy) * ((1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c)) +
           wy * ((1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c));
}

} // namespace

TEST_CASE("resize of a constant image is constant") {
    Image img(3, 5, 2);
    for (double& v : img.data) v = 0.4;
    Image out = resize_bilinear(img, 7, 2);
    for (const double v : out.data) CHECK(v == doctest::Approx(0.4).epsilon(1e-15));
}

TEST_CASE("resize to same size is identity") {
    Rng rng(3);
    Image img(6, 4, 1);
    for (double& v : img.data) v = rng.uniform();
    Image out = resize_bilinear(img, 6, 4);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        CHECK(std::abs(out.data[i] - img.data[i]) < 1e-12);
}

TEST_CASE("checkerboard upscale matches the per-pixel oracle") {
    Image img(2, 2, 1);
    img.at(0, 0, 0) = 0;
    img.at(1, 0, 0) = 1;
    img.at(0, 1, 0) = 1;
    img.at(1, 1, 0) = 0;
    Image out = resize_bilinear(img, 4, 4);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(std::abs(out.at(x, y, 0) - bilinear_oracle(img, 0, x, y, 4, 4)) < 1e-12);
}

TEST_CASE("resize preserves value range") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Rng rng(40 + seed);
        Image img(9, 7, 1);
        for (double& v : img.data) v = rng.uniform();
        double lo = 1.0, hi = 0.0;
        for (const double v : img.data) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        Image out = resize_bilinear(img, 13, 3);
        for (const double v : out.data) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("resize rejects bad output dims") {
    Image img(2, 2, 1);
    CHECK_THROWS_AS(resize_bilinear(img, 0, 3), DimensionError);
}

TEST_CASE("patchify token counts at reference geometry") {
    Image img(384, 384, 1);
    CHECK(patchify(img, 16).dim(0) == 576);
    Image ex(64, 64, 1);
    CHECK(patchify(ex, 16).dim(0) == 16);
}

TEST_CASE("patchify round trip is bit-exact") {
    Rng rng(9);
    Image img(16, 8, 3);
    for (double& v : img.data) v = rng.uniform();
    Image back = unpatchify(patchify(img, 4), 16, 8, 3, 4);
    CHECK(back.data == img.data);
}

TEST_CASE("patchify rejects non-divisible dims") {
    Image img(10, 10, 1);
    CHECK_THROWS_AS(patchify(img, 3), DimensionError);
}

TEST_CASE("density of zero centers is zero") {
    DensityMap map = render_density(8, 8, {}, 1.0);
    CHECK(map.sum() == 0.0);
}

TEST_CASE("single center carries unit mass anywhere") {
    for (const auto& c : std::vector<std::pair<double, double>>{{0, 0}, {7, 7}, {3.3, 1.2}}) {
        DensityMap map = render_density(8, 8, {c}, 1.0);
        CHECK(std::abs(map.sum() - 1.0) < 1e-9);
    }
}

TEST_CASE("density mass is additive across centers") {
    Rng rng(21);
    std::vector<std::pair<double, double>> centers;
    for (int i = 0; i < 17; ++i) centers.emplace_back(rng.uniform(0, 31), rng.uniform(0, 31));
    DensityMap map = render_density(32, 32, centers, 1.5);
    CHECK(std::abs(map.sum() - 17.0) < 1e-6);
    for (const double v : map.data) CHECK(v >= 0.0);
}

TEST_CASE("out-of-bounds center is rejected") {
    CHECK_THROWS_AS(render_density(8, 8, {{9.0, 1.0}}, 1.0), DimensionError);
}

TEST_CASE("density file round trip is bit-identical") {
    Rng rng(5);
    DensityMap map(6, 5);
    for (double& v : map.data) v = static_cast<float>(rng.uniform()); // f32 storage grid
    const std::string path = temp_path("cacvit_density_rt.cvdm");
    write_density(path, map);
    DensityMap back = read_density(path);
    CHECK(back.width == map.width);
    CHECK(back.height == map.height);
    CHECK(back.data == map.data);
    std::ofstream(path, std::ios::binary) << "XXXX";
    CHECK_THROWS_AS(read_density(path), FormatError);
    fs::remove(path);
}

TEST_CASE("density file bytes match hand-assembled layout") {
    // 3×2 map: 4 magic + 4 width + 4 height + 6 f32 payload = 36 bytes.
    DensityMap map(3, 2);
    for (int i = 0; i < 6; ++i) map.data[static_cast<std::size_t>(i)] = i;
    const std::string path = temp_path("cacvit_density_bytes.cvdm");
    write_density(path, map);
    std::ifstream is(path, std::ios::binary);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)),
                                     std::istreambuf_iterator<char>());
    std::vector<unsigned char> expected = {'C', 'V', 'D', 'M', 3, 0, 0, 0, 2, 0, 0, 0};
    for (int i = 0; i < 6; ++i) {
        const float f = static_cast<float>(i);
        unsigned char b[4];
        std::memcpy(b, &f, 4);
        expected.insert(expected.end(), b, b + 4);
    }
    CHECK(bytes.size() == 36);
    CHECK(bytes == expected);
    fs::remove(path);
}

TEST_CASE("constant map writes a flat PGM") {
    const std::string path = temp_path("cacvit_flat.pgm");
    write_pgm(path, 4, 3, std::vector<double>(12, 0.7));
    Image img = read_pgm(path);
    CHECK(img.width == 4);
    CHECK(img.height == 3);
    for (const double v : img.data) CHECK(v == img.data[0]);
    fs::remove(path);
}

TEST_CASE("pgm min-max scaling spans the 8-bit range") {
    const std::string path = temp_path("cacvit_ramp.pgm");
    write_pgm(path, 3, 1, {0.0, 0.5, 1.0});
    Image img = read_pgm(path);
    CHECK(img.data[0] == doctest::Approx(0.0));
    CHECK(img.data[2] == doctest::Approx(1.0));
    fs::remove(path);
}
