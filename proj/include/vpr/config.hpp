#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vpr/matcher.hpp"
#include "vpr/utility.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr {

/// Every tunable of a run. JSON round-trips exactly; unknown keys are rejected.
struct RunConfig {
    // vocabulary
    std::uint32_t k = 16;
    std::uint64_t seed = 0;
    std::uint32_t kmeans_max_iters = 100;
    double kmeans_tol = 1e-4;
    std::uint64_t kmeans_sample_rows = 0;  // 0 = all reference cells

    // retrieval
    std::uint32_t top_c = 20;
    FilterMode mode = FilterMode::Vanilla;
    std::optional<std::int64_t> top_x;  // PS default 10, Combined default X'-1
    std::vector<std::uint32_t> recall_ks{1, 5, 10, 20};
    double positive_radius = 1.0;
    std::optional<double> negative_radius;  // default 2 * positive_radius

    // verification
    double ransac_threshold_px = 3.0;
    std::uint32_t ransac_max_iters = 2000;
    double ransac_confidence = 0.995;
    std::uint64_t ransac_seed = 0;

    // utility ablations
    bool intra_normalized_utility = false;
    bool es_negatives_only = false;

    GeoConfig geo() const;
    UtilityOptions utility_options() const;
    RansacOptions ransac_options() const;
    KMeansOptions kmeans_options() const;
    /// PS and Combined top_x after defaults (Combined returns nullopt = X'-1).
    std::optional<std::int64_t> effective_top_x() const;

    /// Throws ParameterError on an inconsistent value.
    void validate() const;
};

inline constexpr std::int64_t kDefaultPsTopX = 10;

std::string run_config_to_json(const RunConfig& config, int indent = 2);
/// Missing keys keep their defaults; unknown keys throw SchemaError.
RunConfig run_config_from_json(const std::string& text);
RunConfig read_run_config(const std::string& path);

}  // namespace vpr
