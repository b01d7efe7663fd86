#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "helpers.hpp"
#include "vpr/error.hpp"
#include "vpr/utility.hpp"

using namespace vpr;

namespace {

VladVector make_vlad(std::uint32_t k, std::uint32_t dim, std::vector<float> residuals,
                     std::vector<std::uint32_t> occupancy = {}) {
    VladVector v;
    v.k = k;
    v.dim = dim;
    v.residuals = std::move(residuals);
    v.occupancy = occupancy.empty() ? std::vector<std::uint32_t>(k, 1) : std::move(occupancy);
    v.global_desc.assign(std::size_t{k} * dim, 0.0f);
    return v;
}

std::vector<VladVector> random_vlads(std::size_t n, std::uint32_t k, std::uint32_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> g(0.0f, 1.0f);
    std::bernoulli_distribution absent(0.1);
    std::vector<VladVector> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<float> r(std::size_t{k} * dim);
        std::vector<std::uint32_t> occ(k, 3);
        for (std::uint32_t c = 0; c < k; ++c) {
            if (absent(rng)) {
                occ[c] = 0;
                continue;
            }
            for (std::uint32_t j = 0; j < dim; ++j) r[c * dim + j] = g(rng) * float(c + 1);
        }
        out.push_back(make_vlad(k, dim, std::move(r), std::move(occ)));
    }
    return out;
}

double row_distance(const VladVector& a, const VladVector& b, std::uint32_t c) {
    double s = 0.0;
    for (std::uint32_t j = 0; j < a.dim; ++j) {
        const double d = double(a.residuals[c * a.dim + j]) - double(b.residuals[c * b.dim + j]);
        s += d * d;
    }
    return std::sqrt(s);
}

double sse(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s;
}

}  // namespace

TEST_CASE("negatives: frame traverse N=10, P=1, anchor 5") {
    const auto m = test::frame_manifest(10);
    CHECK(find_negatives(m, GeoConfig::from_positive(1.0), 5) == std::vector<std::size_t>{0, 1, 2, 8, 9});
    CHECK(find_negatives(m, GeoConfig::from_positive(1.0), 0) == std::vector<std::size_t>{3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("negatives: geo points 5 km apart with P=50 m are mutual negatives") {
    TraverseManifest m;
    m.position_kind = PositionKind::Geo;
    // 5 km north along a meridian: dlat = 5000 / R radians.
    const double dlat = 5000.0 / 6371000.0 * 180.0 / std::acos(-1.0);
    m.entries.push_back({"a", "", "", GeoPosition{52.5, 13.4}});
    m.entries.push_back({"b", "", "", GeoPosition{52.5 + dlat, 13.4}});
    CHECK(haversine_meters(std::get<GeoPosition>(m.entries[0].position), std::get<GeoPosition>(m.entries[1].position)) ==
          doctest::Approx(5000.0).epsilon(1e-9));
    const auto geo = GeoConfig::from_positive(50.0);
    CHECK(find_negatives(m, geo, 0) == std::vector<std::size_t>{1});
    CHECK(find_negatives(m, geo, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("negatives: P=50 m puts the negative boundary at 100 m") {
    TraverseManifest m;
    m.position_kind = PositionKind::Geo;
    const double per_m = 1.0 / 6371000.0 * 180.0 / std::acos(-1.0);
    m.entries.push_back({"a", "", "", GeoPosition{10.0, 0.0}});
    m.entries.push_back({"near", "", "", GeoPosition{10.0 + 99.0 * per_m, 0.0}});
    m.entries.push_back({"far", "", "", GeoPosition{10.0 + 101.0 * per_m, 0.0}});
    CHECK(find_negatives(m, GeoConfig::from_positive(50.0), 0) == std::vector<std::size_t>{2});
    CHECK_THROWS_AS(GeoConfig({5.0, 1.0}).validate(), ParameterError);
}

TEST_CASE("PS utility: zero residuals give zero, one negative at distance 3 gives 3") {
    std::vector<VladVector> zeros{make_vlad(2, 2, {0, 0, 0, 0}), make_vlad(2, 2, {0, 0, 0, 0})};
    const auto z = place_specific_utility(zeros, {{1}, {0}});
    CHECK(*z.values[0][0] == 0.0);
    CHECK(*z.values[1][1] == 0.0);

    std::vector<VladVector> two{make_vlad(1, 2, {0, 0}), make_vlad(1, 2, {3, 0})};
    const auto one = place_specific_utility(two, {{1}, {}});
    CHECK(*one.values[0][0] == 3.0);
    CHECK(one.rankable == std::vector<bool>{true, false});
    CHECK_FALSE(one.values[1][0].has_value());
}

TEST_CASE("PS utility: N=50 matrix equals a triple-loop oracle, absent clusters excluded") {
    const auto vlads = random_vlads(50, 6, 5, 21);
    const auto m = test::frame_manifest(50);
    const auto negs = find_all_negatives(m, GeoConfig::from_positive(2.0));
    const auto ps = place_specific_utility(vlads, negs);
    for (std::size_t a = 0; a < 50; ++a) {
        for (std::uint32_t c = 0; c < 6; ++c) {
            if (vlads[a].occupancy[c] == 0) {
                CHECK_FALSE(ps.values[a][c].has_value());
                continue;
            }
            double sum = 0.0;
            std::size_t z = 0;
            for (std::size_t n = 0; n < 50; ++n) {
                if (std::abs(double(a) - double(n)) <= 4.0) continue;
                sum += row_distance(vlads[a], vlads[n], c);
                ++z;
            }
            REQUIRE(ps.values[a][c].has_value());
            CHECK(test::rel_diff(*ps.values[a][c], sum / double(z)) <= 1e-9);
        }
    }
}

TEST_CASE("ES utility: constant cluster is zero and low, N=2 closed form") {
    std::vector<VladVector> v{make_vlad(3, 1, {5, 0, 1}), make_vlad(3, 1, {5, 4, 2}), make_vlad(3, 1, {5, 8, 3})};
    const auto m = test::frame_manifest(3);
    const auto es = environment_specific_utility(v, find_all_negatives(m, GeoConfig::from_positive(1.0)));
    CHECK(es.values[0] == 0.0);
    CHECK_FALSE(es.bins.high[0]);
    CHECK(es.bins.high[1]);

    std::vector<VladVector> pair{make_vlad(2, 2, {0, 0, 1, 1}), make_vlad(2, 2, {3, 4, 1, 1})};
    const auto es2 = environment_specific_utility(pair, {{1}, {0}});
    CHECK(es2.values[0] == 5.0);
    CHECK(es2.values[1] == 0.0);
}

TEST_CASE("ES utility: all-pairs average equals a nested-loop oracle and is non-negative") {
    const auto vlads = random_vlads(30, 5, 4, 3);
    const auto m = test::frame_manifest(30);
    const auto negs = find_all_negatives(m, GeoConfig::from_positive(1.0));
    const auto es = environment_specific_utility(vlads, negs);
    const auto es_neg = environment_specific_utility(vlads, negs, {ResidualSource::Raw, EsPairing::NegativesOnly});
    for (std::uint32_t c = 0; c < 5; ++c) {
        double all = 0.0, neg = 0.0;
        for (std::size_t a = 0; a < 30; ++a)
            for (std::size_t n = 0; n < 30; ++n) {
                if (a == n) continue;
                const double d = row_distance(vlads[a], vlads[n], c);
                all += d;
                if (std::abs(double(a) - double(n)) > 2.0) neg += d;
            }
        CHECK(test::rel_diff(es.values[c], all / (30.0 * 29.0)) <= 1e-9);
        CHECK(test::rel_diff(es_neg.values[c], neg / (30.0 * 29.0)) <= 1e-9);
        CHECK(es.values[c] >= 0.0);
    }
}

TEST_CASE("ES utility: injecting a constant at one place raises it, at every place leaves it unchanged") {
    auto vlads = random_vlads(12, 4, 3, 8);
    for (auto& v : vlads) std::fill(v.occupancy.begin(), v.occupancy.end(), 2u);
    const auto negs = find_all_negatives(test::frame_manifest(12), GeoConfig::from_positive(1.0));
    const auto base = environment_specific_utility(vlads, negs);

    auto one = vlads;
    for (std::uint32_t j = 0; j < 3; ++j) one[4].residuals[2 * 3 + j] += 1000.0f;
    const auto raised = environment_specific_utility(one, negs);
    CHECK(raised.values[2] > base.values[2]);
    for (std::uint32_t c : {0u, 1u, 3u}) CHECK(raised.values[c] == base.values[c]);

    auto all = vlads;
    // A power of two keeps float32 sums exact for these magnitudes.
    for (auto& v : all)
        for (std::uint32_t j = 0; j < 3; ++j) v.residuals[2 * 3 + j] += 64.0f;
    const auto shifted = environment_specific_utility(all, negs);
    CHECK(test::rel_diff(shifted.values[2], base.values[2]) <= 1e-6);
}

TEST_CASE("two-bin split: {0.1, 0.1, 5.0, 5.2} puts the large pair high") {
    const std::vector<double> v{0.1, 0.1, 5.0, 5.2};
    const auto s = segregate_two_bins(v);
    CHECK_FALSE(s.degenerate);
    CHECK(s.high == std::vector<bool>{false, false, true, true});
}

TEST_CASE("two-bin split: matches exhaustive bipartition search") {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> u(0.0, 10.0);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> v(8);
        for (auto& x : v) x = u(rng);
        const auto s = segregate_two_bins(v);
        std::vector<double> lo, hi;
        for (std::size_t i = 0; i < 8; ++i) (s.high[i] ? hi : lo).push_back(v[i]);
        REQUIRE_FALSE(lo.empty());
        REQUIRE_FALSE(hi.empty());
        CHECK(*std::max_element(lo.begin(), lo.end()) < *std::min_element(hi.begin(), hi.end()));
        double best = std::numeric_limits<double>::infinity();
        for (unsigned mask = 1; mask < 255; ++mask) {
            std::vector<double> a, b;
            for (std::size_t i = 0; i < 8; ++i) ((mask >> i) & 1 ? a : b).push_back(v[i]);
            best = std::min(best, sse(a) + sse(b));
        }
        CHECK(sse(lo) + sse(hi) <= best + 1e-9);
    }
}

TEST_CASE("two-bin split: identical values are degenerate and all high") {
    const std::vector<double> v{2.0, 2.0, 2.0};
    const auto s = segregate_two_bins(v);
    CHECK(s.degenerate);
    CHECK(s.high == std::vector<bool>{true, true, true});
}

TEST_CASE("ranking: invariant under a strictly increasing transform, absent skipped") {
    std::vector<std::optional<double>> u{0.5, std::nullopt, 2.0, 0.5, -1.0, 3.0};
    std::vector<std::optional<double>> t;
    for (const auto& x : u) t.push_back(x ? std::optional<double>(std::exp(3.0 * *x) + 7.0) : std::nullopt);
    const auto r = rank_clusters(u);
    CHECK(r == std::vector<std::uint32_t>{5, 2, 0, 3, 4});
    CHECK(rank_clusters(t) == r);
}

namespace {

UtilityProfile fixed_profile() {
    UtilityProfile p;
    p.k = 16;
    p.image_ids = {"p0", "p1"};
    p.es_utility.resize(16);
    p.es_high_bin.assign(16, false);
    for (std::uint32_t c : {0u, 2u, 3u, 5u, 7u, 8u, 11u, 13u, 15u}) p.es_high_bin[c] = true;
    p.ps_utility.assign(2, std::vector<std::optional<double>>(16));
    for (std::uint32_t c = 0; c < 16; ++c) p.ps_utility[0][c] = double((c * 7) % 16);
    p.ps_ranking = {rank_clusters(p.ps_utility[0]), {}};
    p.negatives_count = {5, 0};
    return p;
}

}  // namespace

TEST_CASE("selection: ES, PS top 10 and Combined X'-1 rule") {
    const auto p = fixed_profile();
    CHECK(p.useful_cluster_count() == 9);
    CHECK(select_clusters(p, 0, FilterMode::ES).clusters.size() == 9);

    auto ps = select_clusters(p, 0, FilterMode::PS, 10).clusters;
    auto expect_ps = std::vector<std::uint32_t>(p.ps_ranking[0].begin(), p.ps_ranking[0].begin() + 10);
    std::sort(expect_ps.begin(), expect_ps.end());
    CHECK(ps == expect_ps);

    // Set oracle: first 8 ranked clusters that are also ES-high.
    std::vector<std::uint32_t> expect;
    for (std::size_t i = 0; i < 8; ++i)
        if (p.es_high_bin[p.ps_ranking[0][i]]) expect.push_back(p.ps_ranking[0][i]);
    std::sort(expect.begin(), expect.end());
    const auto comb = select_clusters(p, 0, FilterMode::Combined);
    CHECK(comb.clusters == expect);
    CHECK_FALSE(comb.fell_back_to_es);

    CHECK(select_clusters(p, 0, FilterMode::Vanilla).clusters.size() == 16);
    CHECK_THROWS_AS(select_clusters(p, 0, FilterMode::PS, 0), ParameterError);
    CHECK_THROWS_AS(select_clusters(p, 0, FilterMode::PS), ParameterError);
    CHECK_THROWS_AS(select_clusters(p, 1, FilterMode::PS, 3), ParameterError);
}

TEST_CASE("selection: empty Combined intersection falls back to the ES set") {
    auto p = fixed_profile();
    // Top-ranked cluster is ES-low.
    std::uint32_t top = p.ps_ranking[0][0];
    p.es_high_bin[top] = false;
    const auto sel = select_clusters(p, 0, FilterMode::Combined, 1);
    CHECK(sel.fell_back_to_es);
    CHECK(sel.clusters == select_clusters(p, 0, FilterMode::ES).clusters);
}

TEST_CASE("profile: rankings hold exactly the present clusters; report marks absent as null") {
    const auto vlads = random_vlads(10, 5, 3, 4);
    const auto m = test::frame_manifest(10);
    const auto p = compute_utility_profile(m, vlads, GeoConfig::from_positive(1.0));
    for (std::size_t a = 0; a < 10; ++a) {
        std::vector<std::uint32_t> present;
        for (std::uint32_t c = 0; c < 5; ++c)
            if (vlads[a].occupancy[c] > 0) present.push_back(c);
        auto r = p.ps_ranking[a];
        std::sort(r.begin(), r.end());
        CHECK(r == present);
    }
    const auto doc = nlohmann::json::parse(utility_report_json(p));
    CHECK(doc["es_utility"].size() == 5);
    CHECK(doc["per_place"].size() == 10);
    for (std::size_t a = 0; a < 10; ++a)
        for (std::uint32_t c = 0; c < 5; ++c)
            CHECK(doc["per_place"][a]["ps_utility"][c].is_null() == (vlads[a].occupancy[c] == 0));
}

TEST_CASE("modes parse and print") {
    for (auto m : {FilterMode::Vanilla, FilterMode::ES, FilterMode::PS, FilterMode::Combined})
        CHECK(parse_filter_mode(to_string(m)) == m);
    CHECK_THROWS_AS(parse_filter_mode("bogus"), ParameterError);
}
