#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "vpr/feature_store.hpp"
#include "vpr/vlad.hpp"
#include "vpr/vocabulary.hpp"

namespace vpr::test {

inline DenseFeatureMap random_map(std::uint32_t h, std::uint32_t w, std::uint32_t dim, std::uint64_t seed,
                                  std::string id = "img") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    DenseFeatureMap m{std::move(id), h, w, dim, std::vector<float>(std::size_t{h} * w * dim)};
    for (auto& x : m.data) x = n(rng);
    return m;
}

inline Vocabulary random_vocab(std::uint32_t k, std::uint32_t dim, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 1.0f);
    Vocabulary v;
    v.k = k;
    v.dim = dim;
    v.centroids.resize(std::size_t{k} * dim);
    for (auto& x : v.centroids) x = n(rng);
    return v;
}

inline TraverseManifest frame_manifest(std::size_t n, const std::string& name = "t") {
    TraverseManifest m;
    m.name = name;
    m.position_kind = PositionKind::Frame;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = "f" + std::to_string(i);
        m.entries.push_back({id, "features/" + id + ".vprf", "keypoints/" + id + ".vprk",
                             Position{static_cast<std::int64_t>(i)}});
    }
    return m;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("vpr_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline double rel_diff(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

}  // namespace vpr::test
