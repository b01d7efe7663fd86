#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr {

/// Per-cluster residual sums of one image plus its global retrieval vector.
struct VladVector {
    std::string image_id;
    std::uint32_t k = 0;
    std::uint32_t dim = 0;
    std::vector<float> residuals;         // k x dim raw sums of (cell - centroid)
    std::vector<std::uint32_t> occupancy;  // cells assigned per cluster
    std::vector<float> global_desc;       // k*dim, intra- then L2-normalized

    std::span<const float> residual(std::uint32_t c) const {
        return {residuals.data() + std::size_t{c} * dim, dim};
    }
};

inline constexpr double kNormEpsilon = 1e-12;

VladVector encode(const Vocabulary& vocab, const DenseFeatureMap& map);
/// Same, reusing an assignment already computed for this map.
VladVector encode(const Vocabulary& vocab, const DenseFeatureMap& map, const ClusterAssignmentGrid& grid);

/// Cluster labels at image resolution.
struct AssignmentMask {
    std::string image_id;
    std::uint32_t image_h = 0;
    std::uint32_t image_w = 0;
    std::vector<std::uint16_t> labels;  // image_h x image_w, row-major

    std::uint16_t at(std::uint32_t row, std::uint32_t col) const {
        return labels[std::size_t{row} * image_w + col];
    }
};

/// Grid cell that pixel (row, col) falls in under nearest-neighbour upscaling.
inline std::size_t grid_cell_for_pixel(std::uint32_t row, std::uint32_t col, std::uint32_t grid_h,
                                       std::uint32_t grid_w, std::uint32_t image_h, std::uint32_t image_w) {
    const std::uint64_t gr = std::uint64_t{row} * grid_h / image_h;
    const std::uint64_t gc = std::uint64_t{col} * grid_w / image_w;
    return static_cast<std::size_t>(gr * grid_w + gc);
}

AssignmentMask upscale_mask(const ClusterAssignmentGrid& grid, std::uint32_t image_h, std::uint32_t image_w,
                            std::string image_id = {});

std::vector<std::uint8_t> encode_vlad_file(const VladVector& vlad);
VladVector decode_vlad_file(std::span<const std::uint8_t> bytes, std::string image_id = {});
void write_vlad(const VladVector& vlad, const std::filesystem::path& path);
VladVector read_vlad(const std::filesystem::path& path, std::string image_id = {});

}  // namespace vpr
