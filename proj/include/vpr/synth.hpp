#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/utility.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr::synth {

/// Landmark cells replace every cell of `cluster` at places whose frame
/// index is a multiple of `period`.
struct LandmarkSpec {
    std::uint32_t cluster = 0;
    std::uint32_t period = 1;
};

struct SynthSpec {
    std::uint32_t n_places = 60;
    std::uint32_t k_clusters = 8;
    std::uint32_t dim = 16;
    std::uint32_t grid_h = 12;
    std::uint32_t grid_w = 16;
    std::uint32_t image_h = 480;
    std::uint32_t image_w = 640;
    /// Clusters whose residual signature is identical at every place.
    std::vector<std::uint32_t> aliased_clusters{0, 1, 2, 3, 4};
    /// Clusters with a per-place signature drifting along the traverse.
    std::vector<std::uint32_t> unique_clusters{5, 6, 7};
    std::optional<LandmarkSpec> landmark;
    double noise_sigma = 0.01;
    std::uint64_t seed = 7;

    double prototype_scale = 20.0;
    double signature_scale = 0.5;
    double place_correlation = 0.9;  // AR(1) coefficient between consecutive places
    double landmark_offset = 30.0;   // norm of the landmark's offset from its prototype

    std::uint32_t keypoints_per_cluster = 6;
    std::uint32_t d_local = 32;
    double query_feature_sigma = 0.01;
    double query_pixel_sigma = 0.5;
    double query_descriptor_sigma = 0.05;
    double distractor_fraction = 0.3;
    std::uint32_t distractors_per_query = 24;
    std::uint32_t impostor_min_gap = 3;
    std::uint32_t impostor_max_gap = 6;

    /// Throws ParameterError when the cluster sets do not fit k_clusters.
    void validate() const;
};

enum class KeypointKind : std::uint8_t { Unique, Aliased, Landmark, Distractor };

struct GroundTruth {
    std::vector<std::uint32_t> cell_labels;  // generator cluster per grid cell, shared by all places
    std::vector<bool> landmark_places;       // per reference place
    std::vector<std::vector<std::uint32_t>> reference_keypoint_clusters;
    std::vector<std::vector<KeypointKind>> query_keypoint_kinds;
    std::vector<std::int64_t> impostor;  // per query; -1 when none was planted
};

struct Fixture {
    TraverseManifest reference;
    std::vector<DenseFeatureMap> reference_maps;
    std::vector<KeypointSet> reference_keypoints;
    TraverseManifest queries;
    std::vector<DenseFeatureMap> query_maps;
    std::vector<KeypointSet> query_keypoints;
    GroundTruth truth;
};

/// Deterministic per spec (including seed).
Fixture generate(const SynthSpec& spec);

/// Writes reference.json, query.json, features/ and keypoints/ under dir.
void write_fixture(const Fixture& fixture, const std::filesystem::path& dir);

std::string spec_to_json(const SynthSpec& spec, int indent = 2);
SynthSpec spec_from_json(const std::string& text);

/// For each generator cluster, the vocabulary cluster most of its cells are
/// assigned to (majority over every reference cell).
std::vector<std::uint32_t> match_vocabulary_clusters(const Fixture& fixture, const Vocabulary& vocab);

/// Place-specific and environment-specific utility computed directly from
/// feature maps by nested loops; shares no code with the production path.
struct OracleUtility {
    std::vector<double> es;                              // K
    std::vector<std::vector<std::optional<double>>> ps;  // N x K
};

OracleUtility oracle_utility(const std::vector<DenseFeatureMap>& maps, const Vocabulary& vocab,
                             const TraverseManifest& manifest, const GeoConfig& geo);

}  // namespace vpr::synth
