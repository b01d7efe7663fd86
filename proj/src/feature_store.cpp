#include "vpr/feature_store.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <unordered_set>

#include <json.hpp>

#include "binary_io.hpp"
#include "vpr/error.hpp"

namespace vpr {
namespace {

constexpr std::string_view kFeatureMagic = "VPRF";
constexpr std::string_view kKeypointMagic = "VPRK";
constexpr std::uint8_t kVersion = 1;

using json = nlohmann::json;

bool all_finite(std::span<const float> values) {
    for (float v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string stem_or(const std::filesystem::path& path, std::string image_id) {
    return image_id.empty() ? path.stem().string() : std::move(image_id);
}

}  // namespace

void DenseFeatureMap::validate() const {
    if (grid_h == 0 || grid_w == 0 || dim == 0)
        throw ShapeError("feature map '" + image_id + "': grid and dim must be positive");
    if (data.size() != cell_count() * dim)
        throw ShapeError("feature map '" + image_id + "': data length " + std::to_string(data.size()) +
                         " != grid_h*grid_w*dim");
    if (!all_finite(data)) throw ShapeError("feature map '" + image_id + "': non-finite value");
}

void KeypointSet::validate() const {
    if (image_h == 0 || image_w == 0)
        throw ShapeError("keypoints '" + image_id + "': image dims must be positive");
    if (descriptors.size() != points.size() * d_local)
        throw ShapeError("keypoints '" + image_id + "': descriptor rows != point count");
    for (const auto& p : points) {
        if (!std::isfinite(p.u) || !std::isfinite(p.v) || !std::isfinite(p.score) || p.u < 0.0f ||
            p.v < 0.0f || p.u >= static_cast<float>(image_w) || p.v >= static_cast<float>(image_h))
            throw ShapeError("keypoints '" + image_id + "': point outside image or non-finite");
    }
    if (!all_finite(descriptors)) throw ShapeError("keypoints '" + image_id + "': non-finite descriptor");
}

std::filesystem::path TraverseManifest::feature_file(std::size_t i) const {
    return base_dir / entries.at(i).feature_path;
}

std::filesystem::path TraverseManifest::keypoint_file(std::size_t i) const {
    return base_dir / entries.at(i).keypoint_path;
}

void TraverseManifest::validate() const {
    std::unordered_set<std::string> seen;
    for (const auto& e : entries) {
        if (!seen.insert(e.image_id).second)
            throw SchemaError("manifest '" + name + "': duplicate image_id '" + e.image_id + "'");
        const bool geo = std::holds_alternative<GeoPosition>(e.position);
        if (geo != (position_kind == PositionKind::Geo))
            throw SchemaError("manifest '" + name + "': entry '" + e.image_id + "' mixes position kinds");
    }
}

// --- feature maps -----------------------------------------------------------

std::vector<std::uint8_t> encode_feature_map(const DenseFeatureMap& map) {
    map.validate();
    detail::ByteWriter w;
    w.magic(kFeatureMagic);
    w.u8(kVersion);
    w.u32(map.grid_h);
    w.u32(map.grid_w);
    w.u32(map.dim);
    w.f32s(map.data);
    return w.take();
}

DenseFeatureMap decode_feature_map(std::span<const std::uint8_t> bytes, std::string image_id) {
    detail::ByteReader r(bytes, "feature file");
    r.expect_magic(kFeatureMagic);
    r.expect_version(kVersion);
    DenseFeatureMap map;
    map.image_id = std::move(image_id);
    map.grid_h = r.u32();
    map.grid_w = r.u32();
    map.dim = r.u32();
    const std::uint64_t n = std::uint64_t{map.grid_h} * map.grid_w * map.dim;
    r.need_elements(n, sizeof(float));
    map.data.resize(n);
    r.f32s(map.data);
    r.expect_end();
    try {
        map.validate();
    } catch (const ShapeError& e) {
        throw FormatError(std::string("feature file: ") + e.what());
    }
    return map;
}

void write_feature_map(const DenseFeatureMap& map, const std::filesystem::path& path) {
    write_file_bytes(path, encode_feature_map(map));
}

DenseFeatureMap read_feature_map(const std::filesystem::path& path, std::string image_id) {
    auto bytes = read_file_bytes(path);
    try {
        return decode_feature_map(bytes, stem_or(path, std::move(image_id)));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// --- keypoints --------------------------------------------------------------

std::vector<std::uint8_t> encode_keypoints(const KeypointSet& kps) {
    kps.validate();
    detail::ByteWriter w;
    w.magic(kKeypointMagic);
    w.u8(kVersion);
    w.u32(kps.image_h);
    w.u32(kps.image_w);
    w.u32(static_cast<std::uint32_t>(kps.points.size()));
    w.u32(kps.d_local);
    for (const auto& p : kps.points) {
        w.f32(p.u);
        w.f32(p.v);
        w.f32(p.score);
    }
    w.f32s(kps.descriptors);
    return w.take();
}

KeypointSet decode_keypoints(std::span<const std::uint8_t> bytes, std::string image_id) {
    detail::ByteReader r(bytes, "keypoint file");
    r.expect_magic(kKeypointMagic);
    r.expect_version(kVersion);
    KeypointSet kps;
    kps.image_id = std::move(image_id);
    kps.image_h = r.u32();
    kps.image_w = r.u32();
    const std::uint32_t n = r.u32();
    kps.d_local = r.u32();
    r.need_elements(std::uint64_t{n} * (3 + std::uint64_t{kps.d_local}), sizeof(float));
    kps.points.resize(n);
    for (auto& p : kps.points) {
        p.u = r.f32();
        p.v = r.f32();
        p.score = r.f32();
    }
    kps.descriptors.resize(std::size_t{n} * kps.d_local);
    r.f32s(kps.descriptors);
    r.expect_end();
    try {
        kps.validate();
    } catch (const ShapeError& e) {
        throw FormatError(std::string("keypoint file: ") + e.what());
    }
    return kps;
}

void write_keypoints(const KeypointSet& kps, const std::filesystem::path& path) {
    write_file_bytes(path, encode_keypoints(kps));
}

KeypointSet read_keypoints(const std::filesystem::path& path, std::string image_id) {
    auto bytes = read_file_bytes(path);
    try {
        return decode_keypoints(bytes, stem_or(path, std::move(image_id)));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// --- manifests --------------------------------------------------------------

TraverseManifest parse_manifest(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("manifest: invalid JSON: ") + e.what());
    }
    try {
        TraverseManifest m;
        m.name = doc.at("name").get<std::string>();
        const auto kind = doc.at("position_kind").get<std::string>();
        if (kind == "geo")
            m.position_kind = PositionKind::Geo;
        else if (kind == "frame")
            m.position_kind = PositionKind::Frame;
        else
            throw SchemaError("manifest: position_kind must be \"geo\" or \"frame\"");

        for (const auto& e : doc.at("entries")) {
            ManifestEntry entry;
            entry.image_id = e.at("image_id").get<std::string>();
            entry.feature_path = e.at("feature_path").get<std::string>();
            entry.keypoint_path = e.at("keypoint_path").get<std::string>();
            const bool has_geo = e.contains("lat") || e.contains("lon");
            const bool has_frame = e.contains("frame_index");
            if (has_geo == has_frame)
                throw SchemaError("manifest: entry '" + entry.image_id +
                                  "' needs exactly one of lat/lon or frame_index");
            if (has_geo)
                entry.position = GeoPosition{e.at("lat").get<double>(), e.at("lon").get<double>()};
            else
                entry.position = e.at("frame_index").get<std::int64_t>();
            m.entries.push_back(std::move(entry));
        }
        m.validate();
        return m;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("manifest: ") + e.what());
    }
}

std::string manifest_to_json(const TraverseManifest& manifest) {
    manifest.validate();
    json doc;
    doc["name"] = manifest.name;
    doc["position_kind"] = manifest.position_kind == PositionKind::Geo ? "geo" : "frame";
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        json j;
        j["image_id"] = e.image_id;
        j["feature_path"] = e.feature_path;
        j["keypoint_path"] = e.keypoint_path;
        if (const auto* g = std::get_if<GeoPosition>(&e.position)) {
            j["lat"] = g->lat;
            j["lon"] = g->lon;
        } else {
            j["frame_index"] = std::get<std::int64_t>(e.position);
        }
        entries.push_back(std::move(j));
    }
    doc["entries"] = std::move(entries);
    return doc.dump(2);
}

TraverseManifest read_manifest(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    TraverseManifest m;
    try {
        m = parse_manifest(std::string(bytes.begin(), bytes.end()));
    } catch (const SchemaError& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const TraverseManifest& manifest, const std::filesystem::path& path) {
    const std::string text = manifest_to_json(manifest);
    write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<DenseFeatureMap> load_feature_maps(const TraverseManifest& manifest) {
    std::vector<DenseFeatureMap> maps;
    maps.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i)
        maps.push_back(read_feature_map(manifest.feature_file(i), manifest.entries[i].image_id));
    return maps;
}

std::vector<KeypointSet> load_keypoint_sets(const TraverseManifest& manifest) {
    std::vector<KeypointSet> sets;
    sets.reserve(manifest.size());
    for (std::size_t i = 0; i < manifest.size(); ++i)
        sets.push_back(read_keypoints(manifest.keypoint_file(i), manifest.entries[i].image_id));
    return sets;
}

// --- raw files --------------------------------------------------------------

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError(path.string(), "cannot open for reading");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw StorageError(path.string(), "read failed");
    return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError(path.string(), "cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw StorageError(path.string(), "write failed");
}

}  // namespace vpr
