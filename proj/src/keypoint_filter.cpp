#include "vpr/keypoint_filter.hpp"

#include <algorithm>
#include <cmath>

#include "vpr/error.hpp"

namespace vpr {
namespace {

std::vector<bool> membership(std::span<const std::uint32_t> selected, std::uint32_t bound) {
    std::vector<bool> in(bound, false);
    for (auto c : selected)
        if (c < bound) in[c] = true;
    return in;
}

std::uint32_t max_label_bound(std::span<const std::uint32_t> selected) {
    std::uint32_t bound = 0;
    for (auto c : selected) bound = std::max(bound, c + 1);
    return bound;
}

template <typename LabelAt>
FilteredKeypoints filter_with(const KeypointSet& kps, std::span<const std::uint32_t> selected, LabelAt label_at) {
    FilteredKeypoints out{kps.image_id, {}, kps.points.size()};
    const auto bound = max_label_bound(selected);
    const auto in = membership(selected, bound);
    for (std::uint32_t i = 0; i < kps.points.size(); ++i) {
        const auto& p = kps.points[i];
        const auto row = static_cast<std::uint32_t>(std::floor(p.v));
        const auto col = static_cast<std::uint32_t>(std::floor(p.u));
        const std::uint32_t label = label_at(row, col);
        if (label < bound && in[label]) out.kept_indices.push_back(i);
    }
    return out;
}

std::string pgm_header(std::uint32_t w, std::uint32_t h) {
    return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
}

}  // namespace

FilteredKeypoints filter_keypoints(const KeypointSet& kps, const AssignmentMask& mask,
                                   std::span<const std::uint32_t> selected) {
    if (kps.image_h != mask.image_h || kps.image_w != mask.image_w)
        throw ShapeError("filter_keypoints: keypoint image " + std::to_string(kps.image_w) + "x" +
                         std::to_string(kps.image_h) + " != mask " + std::to_string(mask.image_w) + "x" +
                         std::to_string(mask.image_h));
    return filter_with(kps, selected, [&](std::uint32_t r, std::uint32_t c) { return std::uint32_t{mask.at(r, c)}; });
}

FilteredKeypoints filter_keypoints(const KeypointSet& kps, const ClusterAssignmentGrid& grid,
                                   std::span<const std::uint32_t> selected) {
    if (grid.grid_h == 0 || grid.grid_w == 0 || kps.image_h == 0 || kps.image_w == 0)
        throw ShapeError("filter_keypoints: empty grid or image");
    return filter_with(kps, selected, [&](std::uint32_t r, std::uint32_t c) {
        return grid.labels[grid_cell_for_pixel(r, c, grid.grid_h, grid.grid_w, kps.image_h, kps.image_w)];
    });
}

KeypointSet apply_filter(const KeypointSet& kps, const FilteredKeypoints& filtered) {
    KeypointSet out;
    out.image_id = kps.image_id;
    out.image_h = kps.image_h;
    out.image_w = kps.image_w;
    out.d_local = kps.d_local;
    out.points.reserve(filtered.kept_count());
    out.descriptors.reserve(filtered.kept_count() * kps.d_local);
    for (auto i : filtered.kept_indices) {
        if (i >= kps.points.size()) throw ShapeError("apply_filter: index out of range");
        out.points.push_back(kps.points[i]);
        auto d = kps.descriptor(i);
        out.descriptors.insert(out.descriptors.end(), d.begin(), d.end());
    }
    return out;
}

std::string selection_pgm(const AssignmentMask& mask, std::span<const std::uint32_t> selected) {
    const auto bound = max_label_bound(selected);
    const auto in = membership(selected, bound);
    std::string out = pgm_header(mask.image_w, mask.image_h);
    out.reserve(out.size() + mask.labels.size());
    for (auto label : mask.labels) out.push_back(label < bound && in[label] ? char(255) : char(0));
    return out;
}

std::string label_pgm(const AssignmentMask& mask) {
    std::string out = pgm_header(mask.image_w, mask.image_h);
    out.reserve(out.size() + mask.labels.size());
    for (auto label : mask.labels) out.push_back(static_cast<char>(std::min<std::uint16_t>(label, 255)));
    return out;
}

}  // namespace vpr
