#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vpr/feature_store.hpp"

namespace vpr {

/// K centroids in descriptor space; defines hard cluster assignment.
struct Vocabulary {
    std::uint32_t k = 0;
    std::uint32_t dim = 0;
    std::vector<float> centroids;  // k x dim, row-major
    std::uint64_t seed = 0;
    double inertia = 0.0;

    std::span<const float> centroid(std::uint32_t c) const {
        return {centroids.data() + std::size_t{c} * dim, dim};
    }

    /// Closest centroid by squared Euclidean distance, ties to the lowest index.
    std::uint32_t nearest(std::span<const float> x) const;

    /// k >= 2, finite, pairwise distinct centroids; throws ShapeError.
    void validate() const;
};

/// A view over n x dim descriptor rows.
struct DescriptorRows {
    std::span<const float> data;
    std::uint32_t dim = 0;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const float> row(std::size_t i) const { return data.subspan(i * dim, dim); }
};

struct KMeansOptions {
    std::uint32_t k = 16;
    std::uint64_t seed = 0;
    std::uint32_t max_iters = 100;
    double tol = 1e-4;
};

/// Lloyd's k-means with k-means++ seeding. Deterministic for fixed
/// (rows, options) regardless of VPR_THREADS. If inertia_trace is given it
/// receives the inertia after every assignment step.
Vocabulary train_vocabulary(const DescriptorRows& rows, const KMeansOptions& options,
                            std::vector<double>* inertia_trace = nullptr);

/// Concatenates the cells of every map, keeping at most max_rows of them
/// (uniform sample without replacement, seeded). max_rows == 0 keeps all.
std::vector<float> sample_descriptor_rows(std::span<const DenseFeatureMap> maps, std::size_t max_rows,
                                          std::uint64_t seed);

struct ClusterAssignmentGrid {
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::vector<std::uint32_t> labels;  // grid_h x grid_w, row-major

    std::uint32_t at(std::uint32_t row, std::uint32_t col) const {
        return labels[std::size_t{row} * grid_w + col];
    }
};

ClusterAssignmentGrid assign_hard(const Vocabulary& vocab, const DenseFeatureMap& map);

std::vector<std::uint8_t> encode_vocabulary(const Vocabulary& vocab);
Vocabulary decode_vocabulary(std::span<const std::uint8_t> bytes);
void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary read_vocabulary(const std::filesystem::path& path);

}  // namespace vpr
