#include <catch2/catch_amalgamated.hpp>

#include "test_helpers.hpp"
#include "wssamnet/log_filter.hpp"

using namespace wssam;

TEST_CASE("LoG kernel sums to zero and is symmetric", "[filters]") {
    LoGParams params;  // sigma 1, radius 2
    std::vector<double> k = log_kernel(params);
    REQUIRE(k.size() == 125);

    double sum = 0;
    for (double v : k) sum += v;
    CHECK(std::abs(sum) < 1e-12);

    const int side = params.side(), r = params.radius;
    auto at = [&](int x, int y, int z) {
        return k[std::size_t((z + r) * side + (y + r)) * side + (x + r)];
    };
    for (int z = -r; z <= r; ++z)
        for (int y = -r; y <= r; ++y)
            for (int x = -r; x <= r; ++x) CHECK(at(x, y, z) == at(-x, -y, -z));
}

TEST_CASE("LoG kernel center is the minimum for sigma 1", "[filters]") {
    std::vector<double> k = log_kernel(LoGParams{1.0, 2});
    const double center = k[62];  // (0,0,0) in the 5^3 cube
    for (double v : k) CHECK(center <= v + 1e-15);
    CHECK(center < 0.0);
}

TEST_CASE("constant volumes filter to zero", "[filters]") {
    Volume<double> vol({8, 8, 8}, 4.25);
    Volume<double> out = apply_log(vol, LoGParams{});
    for (std::size_t i = 0; i < out.voxel_count(); ++i) CHECK(std::abs(out[i]) < 1e-12);
}

TEST_CASE("unit impulse reproduces a shifted kernel", "[filters]") {
    LoGParams params{1.0, 2};
    Volume<double> vol({11, 11, 11}, 0.0);
    vol.at(5, 5, 5) = 1.0;
    Volume<double> out = apply_log(vol, params);
    std::vector<double> k = log_kernel(params);
    const int side = params.side(), r = params.radius;
    for (int dz = -r; dz <= r; ++dz)
        for (int dy = -r; dy <= r; ++dy)
            for (int dx = -r; dx <= r; ++dx) {
                const double kv = k[std::size_t((dz + r) * side + (dy + r)) * side + (dx + r)];
                CHECK(out.at(5 + dx, 5 + dy, 5 + dz) == Catch::Approx(kv).margin(1e-12));
            }
}

TEST_CASE("filter output keeps the input shape and rejects tiny inputs", "[filters]") {
    Rng rng(21);
    Volume<double> vol = testing::random_volume<double>(rng, {5, 9, 6});
    Volume<double> out = apply_log(vol, LoGParams{});
    CHECK(out.size() == vol.size());
    Volume<double> tiny({3, 8, 8});
    CHECK_THROWS_AS(apply_log(tiny, LoGParams{}), invalid_input_error);
}

TEST_CASE("filtering commutes with interior shifts", "[filters]") {
    Rng rng(22);
    const Vec3i size{12, 12, 12};
    Volume<double> vol = testing::random_volume<double>(rng, size);
    Volume<double> shifted(size);
    for (int z = 0; z < size.z; ++z)
        for (int y = 0; y < size.y; ++y)
            for (int x = 0; x < size.x; ++x)
                shifted.at(x, y, z) = vol.at((x + 1) % size.x, y, z);

    LoGParams params{1.0, 2};
    Volume<double> a = apply_log(vol, params);
    Volume<double> b = apply_log(shifted, params);
    // compare away from boundaries (radius 2 kernel + 1 shift)
    for (int z = 3; z < 9; ++z)
        for (int y = 3; y < 9; ++y)
            for (int x = 3; x < 8; ++x)
                CHECK(b.at(x, y, z) == Catch::Approx(a.at(x + 1, y, z)).margin(1e-12));
}

TEST_CASE("filtering is linear", "[filters]") {
    Rng rng(23);
    const Vec3i size{8, 8, 8};
    Volume<double> v1 = testing::random_volume<double>(rng, size);
    Volume<double> v2 = testing::random_volume<double>(rng, size);
    const double a = 1.5, b = -2.0;
    Volume<double> mix(size);
    for (std::size_t i = 0; i < mix.voxel_count(); ++i) mix[i] = a * v1[i] + b * v2[i];

    LoGParams params{};
    Volume<double> lhs = apply_log(mix, params);
    Volume<double> f1 = apply_log(v1, params);
    Volume<double> f2 = apply_log(v2, params);
    for (std::size_t i = 0; i < lhs.voxel_count(); ++i) {
        const double rhs = a * f1[i] + b * f2[i];
        const double scale = std::max(1.0, std::abs(rhs));
        CHECK(std::abs(lhs[i] - rhs) / scale < 1e-6);
    }
}
