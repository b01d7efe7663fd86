#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/config.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/keypoint_filter.hpp"
#include "vpr/matcher.hpp"
#include "vpr/utility.hpp"
#include "vpr/vlad.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr {

/// Encoded reference traverse: the offline stage's output.
struct ReferenceMap {
    TraverseManifest manifest;
    std::vector<VladVector> vlads;
    std::vector<ClusterAssignmentGrid> grids;
    std::vector<KeypointSet> keypoints;

    std::size_t size() const { return vlads.size(); }
};

ReferenceMap build_reference_map(const TraverseManifest& manifest, std::span<const DenseFeatureMap> maps,
                                 std::vector<KeypointSet> keypoints, const Vocabulary& vocab);

struct Query {
    std::string image_id;
    Position position;
    VladVector vlad;
    KeypointSet keypoints;
};

std::vector<Query> build_queries(const TraverseManifest& manifest, std::span<const DenseFeatureMap> maps,
                                 std::vector<KeypointSet> keypoints, const Vocabulary& vocab);

/// Reference keypoints kept under one filter mode.
struct FilteredReference {
    FilterMode mode = FilterMode::Vanilla;
    std::vector<KeypointSet> keypoints;  // what the local stage matches against
    std::vector<std::size_t> original_counts;
    std::vector<bool> fell_back;  // filter emptied the set or place unrankable

    /// Sum of stored descriptors over sum of original descriptors.
    double storage_ratio() const;
};

FilteredReference filter_reference(const ReferenceMap& ref, const UtilityProfile* profile, FilterMode mode,
                                   std::optional<std::int64_t> top_x);

struct Candidate {
    std::size_t index = 0;
    double distance = 0.0;
};

/// top_c nearest references by Euclidean distance on global descriptors,
/// ascending, ties to the lower index; top_c is clamped to the map size.
std::vector<Candidate> global_retrieve(std::span<const float> query_desc, std::span<const VladVector> references,
                                       std::uint32_t top_c);

struct Localization {
    std::vector<Candidate> candidates;
    std::vector<MatchResult> matches;  // aligned with candidates; empty on global fallback
    std::size_t final_index = 0;       // reference index
    bool global_fallback = false;
};

/// Local re-ranking of given candidates; the highest score wins, ties to the
/// earlier candidate.
Localization rerank(const Query& query, std::vector<Candidate> candidates, const FilteredReference& filtered,
                    const RansacOptions& ransac);

Localization localize(const Query& query, const ReferenceMap& ref, const FilteredReference& filtered,
                      const RunConfig& config);

struct QueryOutcome {
    std::string query_id;
    std::string final_match_id;
    bool correct = false;
};

struct EvalReport {
    FilterMode mode = FilterMode::Vanilla;
    std::optional<std::int64_t> top_x;
    std::map<std::uint32_t, double> recall_at_k;
    double storage_ratio = 1.0;
    double match_time_ratio = 1.0;
    double local_seconds = 0.0;
    double vanilla_local_seconds = 0.0;
    double global_seconds = 0.0;
    std::vector<QueryOutcome> per_query;
};

/// Recall@1 is the re-ranked result. Recall@K for K > 1 is measured on the
/// prediction list [final match, remaining global candidates in order].
EvalReport evaluate(std::span<const Query> queries, const ReferenceMap& ref, const UtilityProfile* profile,
                    const RunConfig& config);

std::string eval_report_json(const EvalReport& report, bool include_timing = true, int indent = 2);
std::string eval_table(std::span<const EvalReport> reports);

/// Raw inputs for a full run: reference and query traverses with features.
struct Dataset {
    TraverseManifest reference;
    std::vector<DenseFeatureMap> reference_maps;
    std::vector<KeypointSet> reference_keypoints;
    TraverseManifest queries;
    std::vector<DenseFeatureMap> query_maps;
    std::vector<KeypointSet> query_keypoints;
};

Dataset load_dataset(const std::string& reference_manifest, const std::string& query_manifest);

/// Everything the offline stage produces from a dataset under a config.
struct PreparedRun {
    Vocabulary vocab;
    ReferenceMap reference;
    UtilityProfile profile;
    std::vector<Query> queries;
};

Vocabulary train_reference_vocabulary(std::span<const DenseFeatureMap> maps, const RunConfig& config);
PreparedRun prepare_run(const Dataset& data, const RunConfig& config);
PreparedRun prepare_run(const Dataset& data, const RunConfig& config, Vocabulary vocab);

struct SweepRow {
    std::int64_t x = 0;  // top-X or vocabulary size
    EvalReport report;
};

/// Combined (or PS) mode evaluated at every top_x in [first, last].
std::vector<SweepRow> sweep_top_x(const PreparedRun& run, const RunConfig& config, std::int64_t first,
                                  std::int64_t last);
/// config.mode evaluated with a vocabulary retrained at each size.
std::vector<SweepRow> sweep_vocabulary(const Dataset& data, const RunConfig& config,
                                       std::span<const std::uint32_t> sizes);
std::string sweep_csv(std::span<const SweepRow> rows, const std::string& x_name);

}  // namespace vpr
