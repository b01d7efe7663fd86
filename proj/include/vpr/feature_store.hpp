#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace vpr {

/// Dense grid of local descriptors for one image (the backbone's last
/// convolutional tensor). Row-major: cell (row, col) starts at
/// (row * grid_w + col) * dim.
struct DenseFeatureMap {
    std::string image_id;
    std::uint32_t grid_h = 0;
    std::uint32_t grid_w = 0;
    std::uint32_t dim = 0;
    std::vector<float> data;

    std::size_t cell_count() const { return std::size_t{grid_h} * grid_w; }
    std::span<const float> cell(std::size_t index) const {
        return {data.data() + index * dim, dim};
    }
    std::span<float> cell(std::size_t index) { return {data.data() + index * dim, dim}; }
    std::span<const float> cell(std::uint32_t row, std::uint32_t col) const {
        return cell(std::size_t{row} * grid_w + col);
    }

    /// Throws ShapeError on a size mismatch or a non-finite value.
    void validate() const;
};

struct Keypoint {
    float u = 0.0f;  // column, pixels
    float v = 0.0f;  // row, pixels
    float score = 0.0f;
};

struct KeypointSet {
    std::string image_id;
    std::uint32_t image_h = 0;
    std::uint32_t image_w = 0;
    std::uint32_t d_local = 0;
    std::vector<Keypoint> points;
    std::vector<float> descriptors;  // points.size() x d_local

    std::size_t size() const { return points.size(); }
    std::span<const float> descriptor(std::size_t i) const {
        return {descriptors.data() + i * d_local, d_local};
    }

    void validate() const;
};

struct GeoPosition {
    double lat = 0.0;
    double lon = 0.0;
};

using Position = std::variant<GeoPosition, std::int64_t>;

enum class PositionKind { Geo, Frame };

struct ManifestEntry {
    std::string image_id;
    std::string feature_path;
    std::string keypoint_path;
    Position position;
};

struct TraverseManifest {
    std::string name;
    PositionKind position_kind = PositionKind::Frame;
    std::vector<ManifestEntry> entries;
    /// Directory relative entry paths resolve against. Not serialized.
    std::filesystem::path base_dir;

    std::size_t size() const { return entries.size(); }
    std::filesystem::path feature_file(std::size_t i) const;
    std::filesystem::path keypoint_file(std::size_t i) const;

    /// Unique ids and a single position kind; throws SchemaError.
    void validate() const;
};

std::vector<std::uint8_t> encode_feature_map(const DenseFeatureMap& map);
DenseFeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, std::string image_id = {});
void write_feature_map(const DenseFeatureMap& map, const std::filesystem::path& path);
/// image_id defaults to the file stem.
DenseFeatureMap read_feature_map(const std::filesystem::path& path, std::string image_id = {});

std::vector<std::uint8_t> encode_keypoints(const KeypointSet& kps);
KeypointSet decode_keypoints(std::span<const std::uint8_t> bytes, std::string image_id = {});
void write_keypoints(const KeypointSet& kps, const std::filesystem::path& path);
KeypointSet read_keypoints(const std::filesystem::path& path, std::string image_id = {});

TraverseManifest parse_manifest(const std::string& json_text);
std::string manifest_to_json(const TraverseManifest& manifest);
TraverseManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const TraverseManifest& manifest, const std::filesystem::path& path);

/// Loads every feature map / keypoint set named by the manifest, in order.
std::vector<DenseFeatureMap> load_feature_maps(const TraverseManifest& manifest);
std::vector<KeypointSet> load_keypoint_sets(const TraverseManifest& manifest);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace vpr
