#include <doctest.h>

#include <algorithm>

#include "helpers.hpp"
#include "vpr/error.hpp"
#include "vpr/synth.hpp"
#include "vpr/utility.hpp"

using namespace vpr;

TEST_CASE("generator: same spec gives bitwise-identical fixtures") {
    synth::SynthSpec s;
    s.n_places = 20;
    const auto a = synth::generate(s), b = synth::generate(s);
    for (std::size_t i = 0; i < 20; ++i) {
        CHECK(encode_feature_map(a.reference_maps[i]) == encode_feature_map(b.reference_maps[i]));
        CHECK(encode_keypoints(a.reference_keypoints[i]) == encode_keypoints(b.reference_keypoints[i]));
        CHECK(encode_keypoints(a.query_keypoints[i]) == encode_keypoints(b.query_keypoints[i]));
    }
    CHECK(manifest_to_json(a.reference) == manifest_to_json(b.reference));
    s.seed = 8;
    const auto c = synth::generate(s);
    CHECK(c.reference_maps[0].data != a.reference_maps[0].data);
}

TEST_CASE("generator: invalid specs are rejected") {
    synth::SynthSpec s;
    s.unique_clusters = {4, 5, 6, 7};  // 4 is also aliased
    CHECK_THROWS_AS(s.validate(), ParameterError);
    synth::SynthSpec gap;
    gap.aliased_clusters = {0, 1, 2};
    CHECK_THROWS_AS(gap.validate(), ParameterError);
    synth::SynthSpec lm;
    lm.landmark = synth::LandmarkSpec{7, 0};
    CHECK_THROWS_AS(lm.validate(), ParameterError);
    synth::SynthSpec big;
    big.unique_clusters = {5, 6, 7, 8};
    CHECK_THROWS_AS(big.validate(), ParameterError);
}

TEST_CASE("generator: spec JSON round trip and fixture on disk") {
    synth::SynthSpec s;
    s.n_places = 6;
    s.landmark = synth::LandmarkSpec{6, 2};
    const auto text = synth::spec_to_json(s);
    CHECK(synth::spec_to_json(synth::spec_from_json(text)) == text);
    CHECK_THROWS_AS(synth::spec_from_json(R"({"n_places": 3, "extra": 1})"), SchemaError);

    const auto dir = test::scratch_dir("fixture");
    synth::write_fixture(synth::generate(s), dir);
    const auto ref = read_manifest(dir / "reference.json");
    CHECK(ref.size() == 6);
    const auto maps = load_feature_maps(ref);
    CHECK(maps[5].grid_h == s.grid_h);
    CHECK(load_keypoint_sets(read_manifest(dir / "query.json")).size() == 6);
}

TEST_CASE("generator: without noise every unique cluster beats every aliased cluster") {
    synth::SynthSpec s;
    s.n_places = 40;
    s.noise_sigma = 0.0;
    const auto f = synth::generate(s);
    // Prototypes as the vocabulary isolate the generator from k-means.
    Vocabulary v;
    v.k = s.k_clusters;
    v.dim = s.dim;
    v.centroids.resize(std::size_t{v.k} * v.dim);
    std::vector<std::size_t> counts(v.k, 0);
    std::vector<double> sums(v.centroids.size(), 0.0);
    for (std::size_t i = 0; i < f.truth.cell_labels.size(); ++i) {
        const auto c = f.truth.cell_labels[i];
        ++counts[c];
        for (std::uint32_t j = 0; j < v.dim; ++j) sums[c * v.dim + j] += f.reference_maps[0].cell(i)[j];
    }
    for (std::uint32_t c = 0; c < v.k; ++c)
        for (std::uint32_t j = 0; j < v.dim; ++j)
            v.centroids[c * v.dim + j] = float(sums[c * v.dim + j] / double(counts[c]));
    const auto oracle = synth::oracle_utility(f.reference_maps, v, f.reference, GeoConfig::from_positive(1.0));
    double min_unique = 1e300, max_aliased = -1;
    for (auto c : s.unique_clusters) min_unique = std::min(min_unique, oracle.es[c]);
    for (auto c : s.aliased_clusters) max_aliased = std::max(max_aliased, oracle.es[c]);
    CHECK(min_unique > max_aliased);
}

TEST_CASE("oracle: two places give ES equal to the single cluster distance; zero maps give zero") {
    Vocabulary v;
    v.k = 2;
    v.dim = 1;
    v.centroids = {0.0f, 10.0f};
    std::vector<DenseFeatureMap> maps{{"a", 1, 2, 1, {1.0f, 10.0f}}, {"b", 1, 2, 1, {-2.0f, 11.0f}}};
    const auto m = test::frame_manifest(2);
    const auto o = synth::oracle_utility(maps, v, m, GeoConfig::from_positive(0.4));
    CHECK(o.es[0] == 3.0);
    CHECK(o.es[1] == 1.0);
    CHECK(*o.ps[0][0] == 3.0);

    std::vector<DenseFeatureMap> zeros{{"a", 1, 2, 1, {0.0f, 0.0f}}, {"b", 1, 2, 1, {0.0f, 0.0f}}};
    Vocabulary vz = v;
    vz.centroids = {0.0f, 5.0f};
    const auto z = synth::oracle_utility(zeros, vz, m, GeoConfig::from_positive(0.4));
    CHECK(z.es[0] == 0.0);
    CHECK(z.es[1] == 0.0);
    CHECK(*z.ps[1][0] == 0.0);
    CHECK_FALSE(z.ps[1][1].has_value());
}

TEST_CASE("generator: distractor queries name an impostor a few places away") {
    const auto f = synth::generate({});
    std::size_t planted = 0;
    for (std::size_t i = 0; i < f.truth.impostor.size(); ++i) {
        if (f.truth.impostor[i] < 0) continue;
        ++planted;
        const auto gap = std::abs(f.truth.impostor[i] - std::int64_t(i));
        CHECK(gap >= 3);
        CHECK(gap <= 6);
        CHECK(std::count(f.truth.query_keypoint_kinds[i].begin(), f.truth.query_keypoint_kinds[i].end(),
                         synth::KeypointKind::Distractor) == 24);
    }
    CHECK(planted > 0);
}
