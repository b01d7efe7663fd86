#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr {

struct Correspondence {
    std::uint32_t query_idx = 0;
    std::uint32_t cand_idx = 0;
    double distance = 0.0;

    bool operator==(const Correspondence&) const = default;
};

/// Pairs (i, j) where j is i's nearest candidate row and i is j's nearest
/// query row (Euclidean, ties to the lowest index). Sorted by query index.
std::vector<Correspondence> mutual_nn(const DescriptorRows& query, const DescriptorRows& candidate);

/// Point in the query image and its counterpart in the candidate image.
struct PixelPair {
    double qx, qy;
    double cx, cy;
};

/// Row-major 3x3 map from query pixels to candidate pixels.
struct Homography {
    std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

    /// Forward transfer error ||H q - c||; +inf when q maps to infinity.
    double transfer_error(const PixelPair& p) const;
};

/// Normalized DLT. Exactly 4 pairs give the interpolating homography, more
/// give the algebraic least-squares fit. nullopt on degenerate input.
std::optional<Homography> estimate_homography(std::span<const PixelPair> pairs);

/// True if any three of the four points (on either side) are collinear.
bool degenerate_sample(std::span<const PixelPair, 4> sample);

struct RansacOptions {
    double threshold_px = 3.0;
    std::uint32_t max_iters = 2000;
    double confidence = 0.995;
    std::uint64_t seed = 0;
};

struct RansacResult {
    std::optional<Homography> homography;
    std::vector<bool> inliers;
    std::size_t inlier_count = 0;
    std::uint32_t iterations = 0;
};

/// Seeded 4-point RANSAC; inlier iff forward transfer error < threshold.
/// The best model is refit on its inliers and the inliers recounted.
RansacResult ransac_homography(std::span<const PixelPair> pairs, const RansacOptions& options = {});

/// p_I / (p_Q + p_c); 0 when the denominator is 0.
double match_score(std::size_t inliers, std::size_t query_count, std::size_t candidate_count);

struct MatchResult {
    std::string query_id;
    std::string candidate_id;
    std::vector<Correspondence> correspondences;
    std::size_t inliers = 0;        // p_I
    std::size_t query_count = 0;    // p_Q
    std::size_t candidate_count = 0;  // p_c
    std::optional<Homography> homography;
    double score = 0.0;
};

/// Mutual-NN matching, RANSAC verification and scoring of one pair.
MatchResult match_pair(const KeypointSet& query, const KeypointSet& candidate, const RansacOptions& options = {});

/// Verification and scoring of externally supplied correspondences.
MatchResult verify_correspondences(const KeypointSet& query, const KeypointSet& candidate,
                                   std::vector<Correspondence> correspondences, const RansacOptions& options = {});

/// JSON list of {"query_idx", "cand_idx"} objects.
std::vector<Correspondence> parse_correspondences_json(const std::string& text);

}  // namespace vpr
