#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/vlad.hpp"

namespace vpr {

/// Localization radii, in meters for geo traverses or frames for frame traverses.
struct GeoConfig {
    double positive_radius = 1.0;
    double negative_radius = 2.0;

    static GeoConfig from_positive(double p) { return {p, 2.0 * p}; }
    /// negative_radius >= positive_radius > 0; throws ParameterError.
    void validate() const;
};

/// Great-circle distance in meters (mean Earth radius 6371 km).
double haversine_meters(const GeoPosition& a, const GeoPosition& b);
/// Haversine meters for geo positions, |frame difference| for frame positions.
double position_distance(const Position& a, const Position& b);

/// Places farther than negative_radius from the anchor, in manifest order.
std::vector<std::size_t> find_negatives(const TraverseManifest& manifest, const GeoConfig& geo, std::size_t anchor);
std::vector<std::vector<std::size_t>> find_all_negatives(const TraverseManifest& manifest, const GeoConfig& geo);

/// Which cluster representation the utility distances are taken over.
enum class ResidualSource { Raw, IntraNormalized };

/// AllPairs averages over every ordered pair a != n; NegativesOnly restricts
/// the inner sum to each anchor's negatives (same N(N-1) normalizer).
enum class EsPairing { AllPairs, NegativesOnly };

struct UtilityOptions {
    ResidualSource source = ResidualSource::Raw;
    EsPairing pairing = EsPairing::AllPairs;
};

struct PlaceSpecificUtility {
    /// N x K; nullopt where the cluster is absent at the anchor or the anchor
    /// has no negatives.
    std::vector<std::vector<std::optional<double>>> values;
    std::vector<bool> rankable;  // Z_a >= 1
};

PlaceSpecificUtility place_specific_utility(std::span<const VladVector> vlads,
                                            const std::vector<std::vector<std::size_t>>& negatives,
                                            ResidualSource source = ResidualSource::Raw);

struct TwoBinSplit {
    std::vector<bool> high;
    bool degenerate = false;  // all values equal; every entry marked high
};

/// Optimal 1-D two-bin partition (minimum within-bin sum of squares) by
/// exhaustive search over sorted split points.
TwoBinSplit segregate_two_bins(std::span<const double> values);

struct EnvironmentSpecificUtility {
    std::vector<double> values;
    TwoBinSplit bins;
};

EnvironmentSpecificUtility environment_specific_utility(std::span<const VladVector> vlads,
                                                        const std::vector<std::vector<std::size_t>>& negatives,
                                                        const UtilityOptions& options = {});

struct UtilityProfile {
    std::uint32_t k = 0;
    std::vector<std::string> image_ids;
    std::vector<double> es_utility;
    std::vector<bool> es_high_bin;
    bool es_degenerate = false;
    std::vector<std::vector<std::optional<double>>> ps_utility;
    std::vector<std::vector<std::uint32_t>> ps_ranking;  // descending PS utility, present clusters only
    std::vector<std::size_t> negatives_count;           // Z_a

    std::size_t places() const { return image_ids.size(); }
    bool rankable(std::size_t place) const { return negatives_count.at(place) > 0; }
    /// X': number of ES high-utility clusters.
    std::uint32_t useful_cluster_count() const;
};

UtilityProfile compute_utility_profile(const TraverseManifest& manifest, std::span<const VladVector> vlads,
                                       const GeoConfig& geo, const UtilityOptions& options = {});

/// Clusters ordered by descending utility, ties to the lower index. Absent
/// entries are skipped.
std::vector<std::uint32_t> rank_clusters(std::span<const std::optional<double>> utilities);

enum class FilterMode { Vanilla, ES, PS, Combined };

struct ClusterSelection {
    std::vector<std::uint32_t> clusters;  // ascending
    bool fell_back_to_es = false;
};

/// Vanilla: every cluster. ES: the high bin. PS: first top_x of the place's
/// ranking (top_x required). Combined: PS(top_x) intersected with the high
/// bin; top_x defaults to max(1, X' - 1). An empty Combined intersection
/// falls back to the ES set.
ClusterSelection select_clusters(const UtilityProfile& profile, std::size_t place, FilterMode mode,
                                 std::optional<std::int64_t> top_x = std::nullopt);

std::string utility_report_json(const UtilityProfile& profile, int indent = 2);
/// Aligned plain-text ES table: cluster, utility, bin.
std::string utility_es_table(const UtilityProfile& profile);

std::string to_string(FilterMode mode);
FilterMode parse_filter_mode(const std::string& name);

}  // namespace vpr
