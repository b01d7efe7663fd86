#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vpr/error.hpp"
#include "vpr/vlad.hpp"

using namespace vpr;

TEST_CASE("encode: every cell on centroid 0 gives zero residuals and zero descriptor") {
    const auto v = test::random_vocab(4, 3, 1);
    DenseFeatureMap m{"z", 3, 3, 3, {}};
    for (int i = 0; i < 9; ++i) m.data.insert(m.data.end(), v.centroid(0).begin(), v.centroid(0).end());
    const auto e = encode(v, m);
    for (float x : e.residuals) CHECK(x == 0.0f);
    for (float x : e.global_desc) CHECK(x == 0.0f);
    CHECK(e.occupancy == std::vector<std::uint32_t>{9, 0, 0, 0});
}

TEST_CASE("encode: single cell at centroid 2 plus e1") {
    Vocabulary v;
    v.k = 3;
    v.dim = 3;
    v.centroids = {0, 0, 0, 10, 0, 0, 0, 10, 0};
    DenseFeatureMap m{"one", 1, 1, 3, {1, 10, 0}};
    const auto e = encode(v, m);
    CHECK(e.residual(2)[0] == 1.0f);
    CHECK(e.residual(2)[1] == 0.0f);
    CHECK(e.residual(2)[2] == 0.0f);
    for (std::uint32_t c : {0u, 1u})
        for (float x : e.residual(c)) CHECK(x == 0.0f);
    CHECK(e.global_desc[6] == doctest::Approx(1.0));
}

TEST_CASE("encode: residuals equal a naive per-cell accumulation") {
    const auto v = test::random_vocab(8, 10, 2);
    const auto m = test::random_map(30, 40, 10, 3);
    const auto e = encode(v, m);
    std::vector<double> sums(8 * 10, 0.0);
    std::vector<std::uint32_t> occ(8, 0);
    for (std::size_t i = 0; i < m.cell_count(); ++i) {
        auto x = m.cell(i);
        std::uint32_t best = 0;
        double best_d = 1e300;
        for (std::uint32_t c = 0; c < 8; ++c) {
            double d = 0;
            for (int j = 0; j < 10; ++j) d += std::pow(double(x[j]) - v.centroids[c * 10 + j], 2);
            if (d < best_d) best_d = d, best = c;
        }
        ++occ[best];
        for (int j = 0; j < 10; ++j) sums[best * 10 + j] += double(x[j]) - v.centroids[best * 10 + j];
    }
    CHECK(e.occupancy == occ);
    for (std::size_t i = 0; i < sums.size(); ++i) CHECK(std::abs(e.residuals[i] - sums[i]) <= 1e-5 * std::max(1.0, std::abs(sums[i])));

    double norm = 0.0;
    for (float x : e.global_desc) norm += double(x) * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    DenseFeatureMap wrong{"w", 1, 1, 9, std::vector<float>(9, 0.0f)};
    CHECK_THROWS_AS(encode(v, wrong), ShapeError);
}

TEST_CASE("decomposition: cluster-wise squared distances sum to the full residual distance") {
    const auto v = test::random_vocab(8, 6, 5);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const auto a = encode(v, test::random_map(6, 8, 6, 100 + s));
        const auto b = encode(v, test::random_map(6, 8, 6, 200 + s));
        double full = 0.0, by_cluster = 0.0;
        for (std::size_t i = 0; i < a.residuals.size(); ++i) full += std::pow(double(a.residuals[i]) - b.residuals[i], 2);
        for (std::uint32_t c = 0; c < 8; ++c) {
            double d = 0.0;
            for (std::uint32_t j = 0; j < 6; ++j) d += std::pow(double(a.residual(c)[j]) - b.residual(c)[j], 2);
            by_cluster += d;
        }
        CHECK(test::rel_diff(full, by_cluster) <= 1e-9);
    }
}

TEST_CASE("upscale: 40x30 grid to 640x480 corner mapping") {
    ClusterAssignmentGrid g{30, 40, std::vector<std::uint32_t>(1200)};
    for (std::uint32_t i = 0; i < 1200; ++i) g.labels[i] = i % 16;
    const auto mask = upscale_mask(g, 480, 640);
    CHECK(mask.at(0, 0) == g.at(0, 0));
    CHECK(mask.at(479, 639) == g.at(29, 39));
    CHECK(grid_cell_for_pixel(479, 639, 30, 40, 480, 640) == 29 * 40 + 39);
    CHECK(grid_cell_for_pixel(0, 0, 30, 40, 480, 640) == 0);
}

TEST_CASE("upscale: 1x1 grid is uniform, 4x4 to 8x8 duplicates into 2x2 blocks") {
    const auto uni = upscale_mask({1, 1, {5}}, 7, 9);
    for (auto l : uni.labels) CHECK(l == 5);

    ClusterAssignmentGrid g{4, 4, {}};
    for (std::uint32_t i = 0; i < 16; ++i) g.labels.push_back(i);
    const auto mask = upscale_mask(g, 8, 8);
    for (std::uint32_t r = 0; r < 8; ++r)
        for (std::uint32_t c = 0; c < 8; ++c) CHECK(mask.at(r, c) == g.at(r / 2, c / 2));
}

TEST_CASE("vlad file round trip") {
    const auto v = test::random_vocab(4, 5, 6);
    const auto e = encode(v, test::random_map(4, 4, 5, 7, "im"));
    const auto dir = test::scratch_dir("vlad");
    write_vlad(e, dir / "im.vpre");
    const auto back = read_vlad(dir / "im.vpre");
    CHECK(back.image_id == "im");
    CHECK(back.residuals == e.residuals);
    CHECK(back.occupancy == e.occupancy);
    CHECK(back.global_desc == e.global_desc);
    auto bytes = encode_vlad_file(e);
    bytes[1] = 'Z';
    CHECK_THROWS_AS(decode_vlad_file(bytes), FormatError);
}
