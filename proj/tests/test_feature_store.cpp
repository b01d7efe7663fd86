#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "helpers.hpp"
#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"

using namespace vpr;

TEST_CASE("feature map: zero 2x2x3 map round-trips and has header + payload size") {
    DenseFeatureMap m{"z", 2, 2, 3, std::vector<float>(12, 0.0f)};
    const auto bytes = encode_feature_map(m);
    // 4 magic + 1 version + 3*u32 header, then 12 float32 values.
    CHECK(bytes.size() == 4 + 1 + 12 + 12 * 4);
    CHECK(std::memcmp(bytes.data(), "VPRF", 4) == 0);
    CHECK(bytes[4] == 1);
    const auto back = decode_feature_map(bytes, "z");
    CHECK(back.grid_h == 2);
    CHECK(back.grid_w == 2);
    CHECK(back.dim == 3);
    CHECK(back.data == m.data);
}

TEST_CASE("feature map: NaN cell is rejected before write") {
    DenseFeatureMap m{"nan", 2, 2, 3, std::vector<float>(12, 0.0f)};
    m.data[7] = std::numeric_limits<float>::quiet_NaN();
    const auto dir = test::scratch_dir("nan");
    CHECK_THROWS_AS(write_feature_map(m, dir / "nan.vprf"), ShapeError);
    CHECK_FALSE(std::filesystem::exists(dir / "nan.vprf"));
}

TEST_CASE("feature map: random 40x30x512 file round trip is bitwise equal") {
    const auto m = test::random_map(30, 40, 512, 11, "big");
    const auto dir = test::scratch_dir("big");
    write_feature_map(m, dir / "big.vprf");
    const auto back = read_feature_map(dir / "big.vprf");
    CHECK(back.image_id == "big");
    REQUIRE(back.data.size() == m.data.size());
    CHECK(std::memcmp(back.data.data(), m.data.data(), m.data.size() * sizeof(float)) == 0);
    CHECK(encode_feature_map(back) == encode_feature_map(m));
}

TEST_CASE("containers: wrong magic, bad version and truncation are format errors") {
    DenseFeatureMap m{"x", 1, 2, 2, {1, 2, 3, 4}};
    auto bytes = encode_feature_map(m);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_feature_map(bad_magic), FormatError);
    auto bad_version = bytes;
    bad_version[4] = 9;
    CHECK_THROWS_AS(decode_feature_map(bad_version), FormatError);
    auto truncated = bytes;
    truncated.pop_back();
    CHECK_THROWS_AS(decode_feature_map(truncated), FormatError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_feature_map(trailing), FormatError);
    CHECK_THROWS_AS(decode_keypoints(bytes), FormatError);
    CHECK_THROWS_AS(decode_feature_map(std::span<const std::uint8_t>{}), FormatError);
}

TEST_CASE("keypoints: round trip is bitwise and validates points") {
    KeypointSet k{"kp", 480, 640, 4, {{10.5f, 20.25f, 0.9f}, {639.9f, 479.9f, 0.1f}}, {1, 2, 3, 4, 5, 6, 7, 8}};
    const auto bytes = encode_keypoints(k);
    CHECK(std::memcmp(bytes.data(), "VPRK", 4) == 0);
    CHECK(bytes.size() == 4 + 1 + 16 + 2 * 3 * 4 + 8 * 4);
    const auto back = decode_keypoints(bytes, "kp");
    CHECK(back.image_h == 480);
    CHECK(back.image_w == 640);
    CHECK(back.d_local == 4);
    REQUIRE(back.size() == 2);
    CHECK(back.points[1].u == 639.9f);
    CHECK(back.descriptors == k.descriptors);
    CHECK(encode_keypoints(back) == bytes);

    KeypointSet outside = k;
    outside.points[0].u = 640.0f;
    CHECK_THROWS_AS(encode_keypoints(outside), ShapeError);
}

TEST_CASE("manifest: frame manifest preserves order and positions") {
    const std::string text = R"({"name": "seq", "position_kind": "frame", "entries": [
        {"image_id": "a", "feature_path": "f/a.vprf", "keypoint_path": "k/a.vprk", "frame_index": 0},
        {"image_id": "b", "feature_path": "f/b.vprf", "keypoint_path": "k/b.vprk", "frame_index": 1},
        {"image_id": "c", "feature_path": "f/c.vprf", "keypoint_path": "k/c.vprk", "frame_index": 2}]})";
    const auto m = parse_manifest(text);
    CHECK(m.name == "seq");
    CHECK(m.position_kind == PositionKind::Frame);
    REQUIRE(m.size() == 3);
    for (std::int64_t i = 0; i < 3; ++i) CHECK(std::get<std::int64_t>(m.entries[static_cast<std::size_t>(i)].position) == i);
    CHECK(m.entries[1].image_id == "b");

    const auto again = parse_manifest(manifest_to_json(m));
    CHECK(manifest_to_json(again) == manifest_to_json(m));
}

TEST_CASE("manifest: mixed position kinds and duplicate ids are schema errors") {
    const std::string mixed = R"({"name": "m", "position_kind": "geo", "entries": [
        {"image_id": "a", "feature_path": "a", "keypoint_path": "a", "lat": 52.5, "lon": 13.4},
        {"image_id": "b", "feature_path": "b", "keypoint_path": "b", "frame_index": 1}]})";
    CHECK_THROWS_AS(parse_manifest(mixed), SchemaError);
    const std::string both = R"({"name": "m", "position_kind": "geo", "entries": [
        {"image_id": "a", "feature_path": "a", "keypoint_path": "a", "lat": 52.5, "lon": 13.4, "frame_index": 3}]})";
    CHECK_THROWS_AS(parse_manifest(both), SchemaError);
    const std::string dup = R"({"name": "m", "position_kind": "frame", "entries": [
        {"image_id": "a", "feature_path": "a", "keypoint_path": "a", "frame_index": 0},
        {"image_id": "a", "feature_path": "b", "keypoint_path": "b", "frame_index": 1}]})";
    CHECK_THROWS_AS(parse_manifest(dup), SchemaError);
    CHECK_THROWS_AS(parse_manifest("{not json"), SchemaError);
}

TEST_CASE("manifest: 314-entry geo traverse loads from disk with N = 314") {
    TraverseManifest m;
    m.name = "berlin_like";
    m.position_kind = PositionKind::Geo;
    for (int i = 0; i < 314; ++i) {
        const std::string id = "r" + std::to_string(i);
        m.entries.push_back({id, "features/" + id + ".vprf", "keypoints/" + id + ".vprk",
                             Position{GeoPosition{52.50 + 1e-4 * i, 13.40 + 5e-5 * i}}});
    }
    const auto dir = test::scratch_dir("geo314");
    write_manifest(m, dir / "reference.json");
    const auto back = read_manifest(dir / "reference.json");
    CHECK(back.size() == 314);
    CHECK(back.position_kind == PositionKind::Geo);
    CHECK(back.entries[313].image_id == "r313");
    CHECK(std::get<GeoPosition>(back.entries[100].position).lat == doctest::Approx(52.51));
    CHECK(back.feature_file(0) == dir / "features/r0.vprf");
}

TEST_CASE("storage: missing file reports a storage error naming the path") {
    try {
        (void)read_feature_map("/nonexistent/dir/x.vprf");
        FAIL("expected StorageError");
    } catch (const StorageError& e) {
        CHECK(std::string(e.what()).find("/nonexistent/dir/x.vprf") != std::string::npos);
    }
}
