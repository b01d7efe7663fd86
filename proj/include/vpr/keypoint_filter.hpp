#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/vlad.hpp"

namespace vpr {

struct FilteredKeypoints {
    std::string image_id;
    std::vector<std::uint32_t> kept_indices;  // strictly increasing, into the original set
    std::size_t original_count = 0;

    std::size_t kept_count() const { return kept_indices.size(); }
};

/// Keeps a keypoint iff the mask label at (floor(v), floor(u)) is in `selected`.
FilteredKeypoints filter_keypoints(const KeypointSet& kps, const AssignmentMask& mask,
                                   std::span<const std::uint32_t> selected);

/// Same decision, looked up on the cell grid without materializing the mask.
FilteredKeypoints filter_keypoints(const KeypointSet& kps, const ClusterAssignmentGrid& grid,
                                   std::span<const std::uint32_t> selected);

/// The subset of `kps` named by `filtered`, descriptors included.
KeypointSet apply_filter(const KeypointSet& kps, const FilteredKeypoints& filtered);

/// Binary P5 image: 255 where the pixel's cluster is selected, 0 elsewhere.
std::string selection_pgm(const AssignmentMask& mask, std::span<const std::uint32_t> selected);
/// Binary P5 image holding each pixel's cluster index as its gray level.
std::string label_pgm(const AssignmentMask& mask);

}  // namespace vpr
