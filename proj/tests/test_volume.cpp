#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "oss/volume.hpp"

using namespace oss;

namespace {

std::string temp_path(const char* name) {
    return std::string("/tmp/ossnet_test_") + name;
}

Volume random_volume(int channels, int d, int h, int w, std::uint64_t seed) {
    Volume v(channels, d, h, w);
    Rng rng(seed);
    for (float& x : v.data) x = static_cast<float>(rng.uniform(-2.0, 2.0));
    return v;
}

}  // namespace

TEST_CASE("osv round trip is bit exact") {
    const Volume v = random_volume(2, 8, 8, 8, 42);
    const std::string path = temp_path("roundtrip.osv");
    save_volume(v, path);
    const Volume loaded = load_volume(path);
    CHECK(loaded.channels == v.channels);
    CHECK(loaded.d == v.d);
    CHECK(loaded.h == v.h);
    CHECK(loaded.w == v.w);
    CHECK(loaded.spacing == v.spacing);
    CHECK(loaded.data == v.data);  // float equality: bit-exact round trip
    std::remove(path.c_str());
}

TEST_CASE("osv payload encoding of 1.0") {
    Volume v(1, 1, 1, 1);
    v.data[0] = 1.0f;
    const std::string path = temp_path("one.osv");
    save_volume(v, path);
    std::ifstream in(path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() >= 4);
    const std::string payload = bytes.substr(bytes.size() - 4);
    CHECK(payload == std::string("\x00\x00\x80\x3f", 4));
    std::remove(path.c_str());
}

TEST_CASE("osv payload length is 4 bytes per value") {
    const Volume v = random_volume(2, 2, 2, 2, 1);
    const std::string path = temp_path("len.osv");
    save_volume(v, path);
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    const auto total = static_cast<std::size_t>(in.tellg());
    std::ifstream in2(path);
    std::string header;
    std::getline(in2, header);  // magic + header share the first line up to \n
    CHECK(total - (header.size() + 1) == 64);
    std::remove(path.c_str());
}

TEST_CASE("osv malformed inputs are rejected") {
    const std::string path = temp_path("bad.osv");
    {
        std::ofstream out(path, std::ios::binary);
        out << "NOPE1 1 2 2 2 1 1 1\n";
    }
    CHECK_THROWS_AS(load_volume(path), FormatError);

    {
        std::ofstream out(path, std::ios::binary);
        out << "OSV1 1 2 2 2 1 1 1\n";
        const float payload[7] = {};
        out.write(reinterpret_cast<const char*>(payload), sizeof(payload));
    }
    CHECK_THROWS_AS(load_volume(path), SizeError);

    {
        std::ofstream out(path, std::ios::binary);
        out << "OSV1 1 2 2 2 1 1 1\n";
        const float payload[9] = {};
        out.write(reinterpret_cast<const char*>(payload), sizeof(payload));
    }
    CHECK_THROWS_AS(load_volume(path), SizeError);
    std::remove(path.c_str());
}

TEST_CASE("mask round trip") {
    Mask m(4, 4, 4);
    Rng rng(3);
    for (auto& v : m.data) v = rng.uniform() < 0.3 ? 1 : 0;
    const std::string path = temp_path("mask.osv");
    save_mask(m, path);
    const Mask loaded = load_mask(path);
    CHECK(loaded.data == m.data);
    std::remove(path.c_str());
}

TEST_CASE("trilinear reproduces voxel centers") {
    const Volume v = random_volume(2, 5, 5, 5, 7);
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 5; ++y) {
            for (int x = 0; x < 5; ++x) {
                const auto s = sample_trilinear(
                    v, {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)});
                CHECK(s[0] == doctest::Approx(v.at(0, z, y, x)).epsilon(1e-12));
                CHECK(s[1] == doctest::Approx(v.at(1, z, y, x)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("trilinear midpoint and zero padding") {
    Volume v(1, 1, 1, 2);
    v.at(0, 0, 0, 0) = 0.0f;
    v.at(0, 0, 0, 1) = 1.0f;
    CHECK(sample_trilinear(v, 0, {0.5, 0.0, 0.0}) == doctest::Approx(0.5));

    Volume c(1, 2, 2, 2);
    for (auto& x : c.data) x = 3.0f;
    // Half a step outside the face: one blend weight of 1/2 falls on padding.
    CHECK(sample_trilinear(c, 0, {-0.5, 0.0, 0.0}) == doctest::Approx(1.5));
    CHECK(sample_trilinear(c, 0, {100.0, 0.0, 0.0}) == doctest::Approx(0.0));
    CHECK_THROWS_AS(sample_trilinear(c, 0, {std::nan(""), 0.0, 0.0}), ArgumentError);
}

TEST_CASE("trilinear stays within stencil bounds and reproduces linear fields") {
    Volume v(1, 6, 6, 6);
    for (int z = 0; z < 6; ++z)
        for (int y = 0; y < 6; ++y)
            for (int x = 0; x < 6; ++x) v.at(0, z, y, x) = static_cast<float>(2 * x - y + 3 * z);
    Rng rng(11);
    for (int i = 0; i < 200; ++i) {
        const Vec3 p{rng.uniform(0.0, 4.9), rng.uniform(0.0, 4.9), rng.uniform(0.0, 4.9)};
        const double expected = 2 * p.x - p.y + 3 * p.z;
        CHECK(sample_trilinear(v, 0, p) == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("downscale_avg block means") {
    Volume v(1, 2, 2, 2);
    for (auto& x : v.data) x = 4.0f;
    const Volume one = downscale_avg(v, 2);
    CHECK(one.d == 1);
    CHECK(one.data[0] == doctest::Approx(4.0));

    Volume mixed(1, 2, 2, 2);
    const float vals[8] = {0, 0, 0, 0, 8, 8, 8, 8};
    for (int i = 0; i < 8; ++i) mixed.data[static_cast<std::size_t>(i)] = vals[i];
    CHECK(downscale_avg(mixed, 2).data[0] == doctest::Approx(4.0));

    const Volume same = downscale_avg(v, 1);
    CHECK(same.data == v.data);
    CHECK_THROWS_AS(downscale_avg(v, 0), ArgumentError);
}

TEST_CASE("downscale_avg preserves the global mean on divisible shapes") {
    const Volume v = random_volume(2, 4, 4, 4, 99);
    const Volume down = downscale_avg(v, 2);
    for (int c = 0; c < 2; ++c) {
        double mean_full = 0.0, mean_down = 0.0;
        for (std::size_t i = 0; i < v.voxels(); ++i) {
            mean_full += v.data[static_cast<std::size_t>(c) * v.voxels() + i];
        }
        for (std::size_t i = 0; i < down.voxels(); ++i) {
            mean_down += down.data[static_cast<std::size_t>(c) * down.voxels() + i];
        }
        CHECK(mean_full / static_cast<double>(v.voxels()) ==
              doctest::Approx(mean_down / static_cast<double>(down.voxels())).epsilon(1e-6));
    }
}

TEST_CASE("downscale_avg zero pads non-divisible shapes") {
    Volume v(1, 1, 1, 3);
    v.data = {3.0f, 3.0f, 3.0f};
    const Volume down = downscale_avg(v, 2);
    CHECK(down.w == 2);
    CHECK(down.data[0] == doctest::Approx(6.0 / 8.0));  // 2 values of 3 in a 2^3 block
    CHECK(down.data[1] == doctest::Approx(3.0 / 8.0));  // 1 value of 3, rest padding
}

TEST_CASE("phantom determinism and mask binarity") {
    PhantomConfig config;
    config.resolution = 32;
    config.seed = 123;
    auto [v1, m1] = generate_phantom(config);
    auto [v2, m2] = generate_phantom(config);
    CHECK(v1.data == v2.data);
    CHECK(m1.data == m2.data);
    for (auto b : m1.data) CHECK((b == 0 || b == 1));
    CHECK(v1.channels == config.channels);
    CHECK(m1.count() > 0);

    config.seed = 124;
    auto [v3, m3] = generate_phantom(config);
    CHECK(v3.data != v1.data);
}

TEST_CASE("phantom with zero blobs is pure noise with empty mask") {
    PhantomConfig config;
    config.resolution = 16;
    config.num_blobs_min = 0;
    config.num_blobs_max = 0;
    config.blob_radius_min = 2.0;
    config.blob_radius_max = 4.0;
    auto [volume, mask] = generate_phantom(config);
    CHECK(mask.count() == 0);
    double var = 0.0;
    for (float x : volume.data) var += x * x;
    CHECK(var > 0.0);
}

TEST_CASE("single centered blob matches the analytic sphere volume") {
    PhantomConfig config;
    config.resolution = 64;
    config.num_blobs_min = 1;
    config.num_blobs_max = 1;
    config.blob_radius_min = 8.0;
    config.blob_radius_max = 8.0;
    config.noise_sigma = 0.0;
    double best_err = 1e9;
    // Blob centers are random; average relative count error over seeds.
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        config.seed = seed;
        auto [volume, mask] = generate_phantom(config);
        const double expected = 4.0 / 3.0 * 3.14159265358979323846 * 8 * 8 * 8;
        const double err = std::abs(static_cast<double>(mask.count()) - expected) / expected;
        best_err = std::min(best_err, err);
        CHECK(err < 0.05);
    }
    CHECK(best_err < 0.05);
}

TEST_CASE("phantom config validation") {
    PhantomConfig config;
    config.resolution = 8;
    CHECK_THROWS_AS(generate_phantom(config), ArgumentError);
    config.resolution = 64;
    config.channels = 5;
    CHECK_THROWS_AS(generate_phantom(config), ArgumentError);
    config.channels = 2;
    config.blob_radius_max = 40.0;
    CHECK_THROWS_AS(generate_phantom(config), ArgumentError);
}
