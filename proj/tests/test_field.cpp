#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "helpers.hpp"
#include "lietorch/field.hpp"
#include "lietorch/io.hpp"

using namespace lietorch;
using doctest::Approx;

TEST_CASE("grid basics") {
    const M2Grid g(5, 4, 8);
    CHECK(g.dtheta() == Approx(kTwoPi / 8));
    CHECK(g.theta(3) == Approx(3 * kTwoPi / 8));
    CHECK(g.voxels() == 160u);
    M2FeatureMap m(g, 2);
    CHECK(m.size() == 320u);
    CHECK(m.index(1, 2, 3, 4) == ((1u * 8 + 2) * 4 + 3) * 5 + 4);
}

TEST_CASE("sample is exact on nodes and linear between them") {
    const M2Grid g(6, 5, 8);
    const M2FeatureMap m = testutil::random_map(g, 2, 1);
    for (int k = 0; k < 8; ++k)
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 6; ++x) CHECK(sample(m, 1, x, y, g.theta(k)) == m(1, k, y, x));

    M2FeatureMap r(g, 1);
    r(0, 2, 2, 3) = 1.0;
    CHECK(sample(r, 0, 2.5, 2, g.theta(2)) == Approx(0.5));
    CHECK(sample(r, 0, 3, 2.25, g.theta(2)) == Approx(0.75));
}

TEST_CASE("sample interpolates across the orientation seam") {
    const M2Grid g(3, 3, 8);
    M2FeatureMap m(g, 1);
    m(0, 7, 1, 1) = 2.0;
    m(0, 0, 1, 1) = 6.0;
    CHECK(sample(m, 0, 1, 1, kTwoPi - g.dtheta() / 2) == Approx(4.0));
    CHECK(sample(m, 0, 1, 1, -g.dtheta() / 2) == Approx(4.0));
}

TEST_CASE("sample is a convex combination") {
    const M2Grid g(6, 6, 8);
    const M2FeatureMap m = testutil::random_map(g, 1, 2);
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0.0, 5.0), T(0.0, kTwoPi);
    double vmax = 0.0;
    for (double v : m.data()) vmax = std::max(vmax, std::abs(v));
    for (int i = 0; i < 500; ++i) CHECK(std::abs(sample(m, 0, U(rng), U(rng), T(rng))) <= vmax + 1e-12);
}

TEST_CASE("padding policies") {
    CHECK(resolve_index(-1, 5, Padding::zero) == -1);
    CHECK(resolve_index(5, 5, Padding::zero) == -1);
    CHECK(resolve_index(-2, 5, Padding::replicate) == 0);
    CHECK(resolve_index(7, 5, Padding::replicate) == 4);
    CHECK(resolve_index(-1, 5, Padding::periodic) == 4);
    CHECK(resolve_index(6, 5, Padding::periodic) == 1);
    CHECK(parse_padding("periodic") == Padding::periodic);
    CHECK(padding_name(Padding::replicate) == "replicate");
    CHECK_THROWS(parse_padding("mirror"));

    const M2Grid g(4, 4, 4);
    M2FeatureMap m(g, 1, 3.0);
    CHECK(sample(m, 0, -1, 0, 0, Padding::zero) == 0.0);
    CHECK(sample(m, 0, -1, 0, 0, Padding::replicate) == 3.0);
    CHECK(sample(m, 0, -0.5, 0, 0, Padding::zero) == Approx(1.5));
}

TEST_CASE("rotate_quarter") {
    const M2Grid g(7, 7, 8);
    const M2FeatureMap m = testutil::random_map(g, 2, 3);
    CHECK(rotate_quarter(m, 0).data() == m.data());
    M2FeatureMap r = m;
    for (int i = 0; i < 4; ++i) r = rotate_quarter(r, 1);
    CHECK(r.data() == m.data());
    CHECK(rotate_quarter(rotate_quarter(m, 1), 1).data() == rotate_quarter(m, 2).data());
    CHECK(rotate_quarter(rotate_quarter(m, 3), 1).data() == m.data());

    // A voxel at position p and orientation 0 moves to R p about the center and orientation K/4.
    M2FeatureMap d(g, 1);
    const int x0 = 5, y0 = 1;
    d(0, 0, y0, x0) = 1.0;
    const M2FeatureMap rd = rotate_quarter(d, 1);
    const double c = 3.0;
    const int X = static_cast<int>(c - (y0 - c)), Y = static_cast<int>(c + (x0 - c));
    CHECK(rd(0, 2, Y, X) == 1.0);
    double total = 0.0;
    for (double v : rd.data()) total += v;
    CHECK(total == 1.0);

    CHECK_THROWS(rotate_quarter(M2FeatureMap(M2Grid(4, 5, 8), 1), 1));
    CHECK_THROWS(rotate_quarter(M2FeatureMap(M2Grid(4, 4, 6), 1), 1));
}

TEST_CASE("translate_int") {
    const M2Grid g(8, 6, 4);
    const M2FeatureMap m = testutil::random_map(g, 1, 5);
    CHECK(translate_int(m, 0, 0).data() == m.data());
    CHECK(translate_int(translate_int(m, 3, -2, Padding::periodic), -3, 2, Padding::periodic).data() == m.data());

    M2FeatureMap d(g, 1);
    d(0, 1, 1, 2) = 1.0;
    const M2FeatureMap t = translate_int(d, 2, 3);
    CHECK(t(0, 1, 4, 4) == 1.0);

    auto sorted = [](std::vector<double> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(translate_int(m, 5, 1, Padding::periodic).data()) == sorted(m.data()));
}

TEST_CASE("image transforms") {
    const Image2D img = testutil::random_image(5, 5, 2, 7);
    Image2D r = img;
    for (int i = 0; i < 4; ++i) r = rotate_quarter(r, 1);
    CHECK(r.data() == img.data());
    const Image2D t = translate_int(img, 1, 0);
    CHECK(t(1, 2, 3) == img(1, 2, 2));
    CHECK(t(1, 2, 0) == 0.0);
}

TEST_CASE("LTF round trip and sidecar") {
    const auto dir = std::filesystem::temp_directory_path() / "lietorch_test_field";
    std::filesystem::create_directories(dir);
    const M2FeatureMap m = testutil::random_map(M2Grid(5, 4, 8), 3, 9);
    write_feature_map(dir / "m.ltf", m);
    CHECK(std::filesystem::exists(sidecar_path(dir / "m.ltf")));
    const M2FeatureMap back = read_feature_map(dir / "m.ltf");
    CHECK(back.grid() == m.grid());
    CHECK(back.channels() == 3);
    CHECK(testutil::max_abs_diff(back.data(), m.data()) < 1e-7);

    // Header layout: magic, rank, dims.
    std::ifstream is(dir / "m.ltf", std::ios::binary);
    char magic[4];
    is.read(magic, 4);
    CHECK(std::string(magic, 4) == "LTF1");
    std::uint32_t rank = 0;
    is.read(reinterpret_cast<char*>(&rank), 4);
    CHECK(rank == 4u);
    CHECK(std::filesystem::file_size(dir / "m.ltf") == 4 + 4 + 16 + 4 * m.size());

    const std::uint32_t dims[2] = {2, 3};
    const std::vector<double> v{1, 2, 3, 4, 5, 6.5};
    write_ltf(dir / "raw.ltf", dims, v);
    const LtfTensor t = read_ltf(dir / "raw.ltf");
    CHECK(t.dims == std::vector<std::uint32_t>{2, 3});
    CHECK(t.values[5] == 6.5f);

    std::ofstream(dir / "bad.ltf") << "nope";
    CHECK_THROWS(read_ltf(dir / "bad.ltf"));
    CHECK_THROWS(read_ltf(dir / "missing.ltf"));
}

TEST_CASE("PGM round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "lietorch_test_field";
    std::filesystem::create_directories(dir);
    Image2D img(4, 3, 1);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 4; ++x) img(0, y, x) = (y * 4 + x) / 11.0;
    write_pgm(dir / "a.pgm", img);
    const Image2D back = read_pgm(dir / "a.pgm");
    CHECK(back.width() == 4);
    CHECK(back.height() == 3);
    CHECK(testutil::max_abs_diff(back.data(), img.data()) <= 0.5 / 255 + 1e-12);
    CHECK(load_image_any(dir / "a.pgm").data() == back.data());

    write_image(dir / "b.ltf", img);
    CHECK(testutil::max_abs_diff(load_image_any(dir / "b.ltf").data(), img.data()) < 1e-7);
}
