#include "vpr/synth.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

#include <json.hpp>

#include "vpr/error.hpp"

namespace vpr::synth {
namespace {

using json = nlohmann::json;

class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double normal(double sigma) { return std::normal_distribution<double>(0.0, sigma)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    std::size_t index(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(engine_); }
    std::uint32_t between(std::uint32_t lo, std::uint32_t hi) {
        return std::uniform_int_distribution<std::uint32_t>(lo, hi)(engine_);
    }
    bool chance(double p) { return uniform(0.0, 1.0) < p; }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

std::vector<double> gaussian_vector(Rng& rng, std::size_t n, double sigma) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(sigma);
    return v;
}

std::string padded(const char* prefix, std::size_t i) {
    std::ostringstream os;
    os << prefix << std::setw(4) << std::setfill('0') << i;
    return os.str();
}

struct CellBox {
    double x0, y0, x1, y1;
};

CellBox cell_box(const SynthSpec& s, std::size_t cell) {
    const std::size_t row = cell / s.grid_w, col = cell % s.grid_w;
    // Pixel (r, c) maps to cell (r*gh/H, c*gw/W); invert that for the pixel span.
    auto first_pixel = [](std::size_t g, std::uint32_t grid, std::uint32_t image) {
        return static_cast<double>((g * image + grid - 1) / grid);
    };
    return {first_pixel(col, s.grid_w, s.image_w), first_pixel(row, s.grid_h, s.image_h),
            first_pixel(col + 1, s.grid_w, s.image_w), first_pixel(row + 1, s.grid_h, s.image_h)};
}

Keypoint random_point_in(Rng& rng, const CellBox& box) {
    // Keep a half-pixel margin so floor() stays inside the cell.
    const float u = static_cast<float>(rng.uniform(box.x0 + 0.5, box.x1 - 0.5));
    const float v = static_cast<float>(rng.uniform(box.y0 + 0.5, box.y1 - 0.5));
    return {u, v, static_cast<float>(rng.uniform(0.5, 1.0))};
}

float clamp_pixel(double x, std::uint32_t extent) {
    // Clamp in float: the largest double below extent rounds back up to it.
    const float hi = std::nextafter(static_cast<float>(extent), 0.0f);
    return std::clamp(static_cast<float>(x), 0.0f, hi);
}

}  // namespace

void SynthSpec::validate() const {
    if (n_places < 2) throw ParameterError("synth: n_places must be >= 2");
    if (k_clusters < 2) throw ParameterError("synth: k_clusters must be >= 2");
    if (dim == 0 || d_local == 0) throw ParameterError("synth: dims must be positive");
    if (grid_h == 0 || grid_w == 0 || image_h < grid_h || image_w < grid_w)
        throw ParameterError("synth: grid must be nonempty and no larger than the image");
    if (std::size_t{grid_h} * grid_w < k_clusters) throw ParameterError("synth: grid has fewer cells than clusters");
    if (image_h / grid_h < 2 || image_w / grid_w < 2) throw ParameterError("synth: cells must be at least 2 px wide");
    std::vector<int> role(k_clusters, 0);
    for (auto c : aliased_clusters) {
        if (c >= k_clusters) throw ParameterError("synth: aliased cluster " + std::to_string(c) + " >= k_clusters");
        role[c] |= 1;
    }
    for (auto c : unique_clusters) {
        if (c >= k_clusters) throw ParameterError("synth: unique cluster " + std::to_string(c) + " >= k_clusters");
        if (role[c] & 1) throw ParameterError("synth: cluster " + std::to_string(c) + " is both aliased and unique");
        role[c] |= 2;
    }
    for (std::uint32_t c = 0; c < k_clusters; ++c)
        if (role[c] == 0) throw ParameterError("synth: cluster " + std::to_string(c) + " is neither aliased nor unique");
    if (landmark) {
        if (landmark->cluster >= k_clusters) throw ParameterError("synth: landmark cluster >= k_clusters");
        if (landmark->period < 1) throw ParameterError("synth: landmark period must be >= 1");
    }
    if (!(noise_sigma >= 0 && query_feature_sigma >= 0 && query_pixel_sigma >= 0 && query_descriptor_sigma >= 0))
        throw ParameterError("synth: noise levels must be >= 0");
    if (!(place_correlation >= 0.0 && place_correlation <= 1.0))
        throw ParameterError("synth: place_correlation must lie in [0, 1]");
    if (!(distractor_fraction >= 0.0 && distractor_fraction <= 1.0))
        throw ParameterError("synth: distractor_fraction must lie in [0, 1]");
    if (impostor_min_gap < 1 || impostor_max_gap < impostor_min_gap)
        throw ParameterError("synth: need 1 <= impostor_min_gap <= impostor_max_gap");
}

Fixture generate(const SynthSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    const std::uint32_t K = spec.k_clusters, D = spec.dim, N = spec.n_places;
    const std::size_t cells = std::size_t{spec.grid_h} * spec.grid_w;

    std::vector<bool> aliased(K, false);
    for (auto c : spec.aliased_clusters) aliased[c] = true;

    // Shared draws, in contract order.
    std::vector<std::vector<double>> prototype(K);
    for (auto& p : prototype) p = gaussian_vector(rng, D, spec.prototype_scale);

    std::vector<std::uint32_t> layout(cells);
    for (std::size_t i = 0; i < cells; ++i) layout[i] = static_cast<std::uint32_t>(i * K / cells);
    std::shuffle(layout.begin(), layout.end(), rng.engine());
    std::vector<std::vector<std::size_t>> cells_of(K);
    for (std::size_t i = 0; i < cells; ++i) cells_of[layout[i]].push_back(i);

    std::vector<std::vector<double>> aliased_signature(K);
    for (std::uint32_t c = 0; c < K; ++c) aliased_signature[c] = gaussian_vector(rng, D, spec.signature_scale);

    // Unique signatures drift along the traverse as an AR(1) process.
    const double rho = spec.place_correlation;
    const double innovation = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    std::vector<std::vector<std::vector<double>>> signature(N, std::vector<std::vector<double>>(K));
    for (std::uint32_t c = 0; c < K; ++c) {
        std::vector<double> s = gaussian_vector(rng, D, spec.signature_scale);
        for (std::uint32_t p = 0; p < N; ++p) {
            if (p > 0)
                for (auto& x : s) x = rho * x + innovation * rng.normal(spec.signature_scale);
            signature[p][c] = s;
        }
    }

    std::vector<double> landmark_offset = gaussian_vector(rng, D, 1.0);
    {
        double norm = 0.0;
        for (double x : landmark_offset) norm += x * x;
        norm = std::sqrt(norm);
        for (auto& x : landmark_offset) x *= spec.landmark_offset / std::max(norm, 1e-12);
    }

    std::vector<std::vector<double>> descriptor_base(K);
    for (auto& b : descriptor_base) b = gaussian_vector(rng, spec.d_local, 1.0);

    // Landmark keypoints look the same wherever the landmark appears.
    std::vector<Keypoint> landmark_points;
    std::vector<std::vector<double>> landmark_desc;
    if (spec.landmark) {
        const auto& lcells = cells_of[spec.landmark->cluster];
        for (std::uint32_t i = 0; i < spec.keypoints_per_cluster; ++i) {
            landmark_points.push_back(random_point_in(rng, cell_box(spec, lcells[rng.index(lcells.size())])));
            auto d = descriptor_base[spec.landmark->cluster];
            for (auto& x : d) x += rng.normal(1.0);
            landmark_desc.push_back(std::move(d));
        }
    }

    Fixture fx;
    fx.truth.cell_labels = layout;
    fx.truth.landmark_places.assign(N, false);
    fx.reference.name = "synthetic-reference";
    fx.reference.position_kind = PositionKind::Frame;
    fx.queries.name = "synthetic-query";
    fx.queries.position_kind = PositionKind::Frame;

    // Reference traverse.
    for (std::uint32_t p = 0; p < N; ++p) {
        const bool has_landmark = spec.landmark && p % spec.landmark->period == 0;
        fx.truth.landmark_places[p] = has_landmark;
        const std::string id = padded("ref_", p);

        DenseFeatureMap map{id, spec.grid_h, spec.grid_w, D, std::vector<float>(cells * D)};
        for (std::size_t cell = 0; cell < cells; ++cell) {
            const std::uint32_t c = layout[cell];
            const bool is_landmark = has_landmark && c == spec.landmark->cluster;
            const auto& offset = is_landmark ? landmark_offset : aliased[c] ? aliased_signature[c] : signature[p][c];
            for (std::uint32_t j = 0; j < D; ++j)
                map.data[cell * D + j] = static_cast<float>(prototype[c][j] + offset[j] + rng.normal(spec.noise_sigma));
        }

        KeypointSet kps{id, spec.image_h, spec.image_w, spec.d_local, {}, {}};
        std::vector<std::uint32_t> kp_clusters;
        for (std::uint32_t c = 0; c < K; ++c) {
            const bool is_landmark = has_landmark && c == spec.landmark->cluster;
            for (std::uint32_t i = 0; i < spec.keypoints_per_cluster; ++i) {
                if (is_landmark) {
                    kps.points.push_back(landmark_points[i]);
                    for (double x : landmark_desc[i]) kps.descriptors.push_back(static_cast<float>(x));
                } else {
                    kps.points.push_back(random_point_in(rng, cell_box(spec, cells_of[c][rng.index(cells_of[c].size())])));
                    for (std::uint32_t j = 0; j < spec.d_local; ++j)
                        kps.descriptors.push_back(static_cast<float>(descriptor_base[c][j] + rng.normal(1.0)));
                }
                kp_clusters.push_back(c);
            }
        }
        fx.reference.entries.push_back(
            {id, "features/" + id + ".vprf", "keypoints/" + id + ".vprk", std::int64_t{p}});
        fx.reference_maps.push_back(std::move(map));
        fx.reference_keypoints.push_back(std::move(kps));
        fx.truth.reference_keypoint_clusters.push_back(std::move(kp_clusters));
    }

    // Query traverse: a noisy revisit with fresh transient content on aliased
    // clusters and, for some queries, keypoints copied from an impostor place.
    for (std::uint32_t p = 0; p < N; ++p) {
        const std::string id = padded("qry_", p);
        DenseFeatureMap map = fx.reference_maps[p];
        map.image_id = id;
        for (auto& x : map.data) x = static_cast<float>(x + rng.normal(spec.query_feature_sigma));

        const auto& ref_kps = fx.reference_keypoints[p];
        const auto& ref_clusters = fx.truth.reference_keypoint_clusters[p];
        KeypointSet kps{id, spec.image_h, spec.image_w, spec.d_local, {}, {}};
        std::vector<KeypointKind> kinds;
        std::vector<std::size_t> aliased_slots;
        for (std::size_t i = 0; i < ref_kps.size(); ++i) {
            const std::uint32_t c = ref_clusters[i];
            if (aliased[c] && !(fx.truth.landmark_places[p] && c == spec.landmark->cluster)) {
                aliased_slots.push_back(kps.points.size());
                kps.points.push_back(random_point_in(rng, cell_box(spec, cells_of[c][rng.index(cells_of[c].size())])));
                for (std::uint32_t j = 0; j < spec.d_local; ++j)
                    kps.descriptors.push_back(static_cast<float>(descriptor_base[c][j] + rng.normal(1.0)));
                kinds.push_back(KeypointKind::Aliased);
                continue;
            }
            const auto& src = ref_kps.points[i];
            kps.points.push_back({clamp_pixel(src.u + rng.normal(spec.query_pixel_sigma), spec.image_w),
                                  clamp_pixel(src.v + rng.normal(spec.query_pixel_sigma), spec.image_h), src.score});
            for (float x : ref_kps.descriptor(i))
                kps.descriptors.push_back(static_cast<float>(x + rng.normal(spec.query_descriptor_sigma)));
            const bool lm = fx.truth.landmark_places[p] && c == spec.landmark->cluster;
            kinds.push_back(lm ? KeypointKind::Landmark : KeypointKind::Unique);
        }

        std::int64_t impostor = -1;
        if (rng.chance(spec.distractor_fraction)) {
            const std::uint32_t gap = rng.between(spec.impostor_min_gap, spec.impostor_max_gap);
            const bool forward = rng.chance(0.5);
            const std::int64_t up = std::int64_t{p} + gap, down = std::int64_t{p} - gap;
            if (forward && up < N) impostor = up;
            else if (down >= 0) impostor = down;
            else if (up < N) impostor = up;
        }
        if (impostor >= 0) {
            const auto& imp_kps = fx.reference_keypoints[static_cast<std::size_t>(impostor)];
            const auto& imp_clusters = fx.truth.reference_keypoint_clusters[static_cast<std::size_t>(impostor)];
            std::size_t slot = 0;
            for (std::size_t i = 0; i < imp_kps.size() && slot < aliased_slots.size() &&
                                    slot < spec.distractors_per_query;
                 ++i) {
                if (!aliased[imp_clusters[i]]) continue;
                const std::size_t dst = aliased_slots[slot++];
                const auto& src = imp_kps.points[i];
                kps.points[dst] = {clamp_pixel(src.u + rng.normal(spec.query_pixel_sigma), spec.image_w),
                                   clamp_pixel(src.v + rng.normal(spec.query_pixel_sigma), spec.image_h), src.score};
                auto d = imp_kps.descriptor(i);
                for (std::uint32_t j = 0; j < spec.d_local; ++j)
                    kps.descriptors[dst * spec.d_local + j] =
                        static_cast<float>(d[j] + rng.normal(spec.query_descriptor_sigma));
                kinds[dst] = KeypointKind::Distractor;
            }
        }

        fx.queries.entries.push_back({id, "features/" + id + ".vprf", "keypoints/" + id + ".vprk", std::int64_t{p}});
        fx.query_maps.push_back(std::move(map));
        fx.query_keypoints.push_back(std::move(kps));
        fx.truth.query_keypoint_kinds.push_back(std::move(kinds));
        fx.truth.impostor.push_back(impostor);
    }
    return fx;
}

void write_fixture(const Fixture& fx, const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < fx.reference.size(); ++i) {
        write_feature_map(fx.reference_maps[i], dir / fx.reference.entries[i].feature_path);
        write_keypoints(fx.reference_keypoints[i], dir / fx.reference.entries[i].keypoint_path);
    }
    for (std::size_t i = 0; i < fx.queries.size(); ++i) {
        write_feature_map(fx.query_maps[i], dir / fx.queries.entries[i].feature_path);
        write_keypoints(fx.query_keypoints[i], dir / fx.queries.entries[i].keypoint_path);
    }
    write_manifest(fx.reference, dir / "reference.json");
    write_manifest(fx.queries, dir / "query.json");

    json truth;
    truth["cell_labels"] = fx.truth.cell_labels;
    truth["impostor"] = fx.truth.impostor;
    json lm = json::array();
    for (bool b : fx.truth.landmark_places) lm.push_back(b);
    truth["landmark_places"] = std::move(lm);
    const std::string text = truth.dump(2);
    write_file_bytes(dir / "ground_truth.json",
                     std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string spec_to_json(const SynthSpec& s, int indent) {
    json doc;
    doc["n_places"] = s.n_places;
    doc["k_clusters"] = s.k_clusters;
    doc["dim"] = s.dim;
    doc["grid_h"] = s.grid_h;
    doc["grid_w"] = s.grid_w;
    doc["image_h"] = s.image_h;
    doc["image_w"] = s.image_w;
    doc["aliased_clusters"] = s.aliased_clusters;
    doc["unique_clusters"] = s.unique_clusters;
    doc["landmark"] = s.landmark ? json{{"cluster", s.landmark->cluster}, {"period", s.landmark->period}} : json(nullptr);
    doc["noise_sigma"] = s.noise_sigma;
    doc["seed"] = s.seed;
    doc["prototype_scale"] = s.prototype_scale;
    doc["signature_scale"] = s.signature_scale;
    doc["place_correlation"] = s.place_correlation;
    doc["landmark_offset"] = s.landmark_offset;
    doc["keypoints_per_cluster"] = s.keypoints_per_cluster;
    doc["d_local"] = s.d_local;
    doc["query_feature_sigma"] = s.query_feature_sigma;
    doc["query_pixel_sigma"] = s.query_pixel_sigma;
    doc["query_descriptor_sigma"] = s.query_descriptor_sigma;
    doc["distractor_fraction"] = s.distractor_fraction;
    doc["distractors_per_query"] = s.distractors_per_query;
    doc["impostor_min_gap"] = s.impostor_min_gap;
    doc["impostor_max_gap"] = s.impostor_max_gap;
    return doc.dump(indent);
}

SynthSpec spec_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("synth spec: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("synth spec: expected a JSON object");
    const json defaults = json::parse(spec_to_json(SynthSpec{}));
    for (const auto& item : doc.items())
        if (!defaults.contains(item.key())) throw SchemaError("synth spec: unknown key '" + item.key() + "'");
    SynthSpec s;
    try {
        auto get = [&](const char* key, auto& out) {
            if (doc.contains(key)) out = doc.at(key).get<std::decay_t<decltype(out)>>();
        };
        get("n_places", s.n_places);
        get("k_clusters", s.k_clusters);
        get("dim", s.dim);
        get("grid_h", s.grid_h);
        get("grid_w", s.grid_w);
        get("image_h", s.image_h);
        get("image_w", s.image_w);
        get("aliased_clusters", s.aliased_clusters);
        get("unique_clusters", s.unique_clusters);
        if (doc.contains("landmark")) {
            const auto& lm = doc.at("landmark");
            if (lm.is_null())
                s.landmark.reset();
            else
                s.landmark = LandmarkSpec{lm.at("cluster").get<std::uint32_t>(), lm.at("period").get<std::uint32_t>()};
        }
        get("noise_sigma", s.noise_sigma);
        get("seed", s.seed);
        get("prototype_scale", s.prototype_scale);
        get("signature_scale", s.signature_scale);
        get("place_correlation", s.place_correlation);
        get("landmark_offset", s.landmark_offset);
        get("keypoints_per_cluster", s.keypoints_per_cluster);
        get("d_local", s.d_local);
        get("query_feature_sigma", s.query_feature_sigma);
        get("query_pixel_sigma", s.query_pixel_sigma);
        get("query_descriptor_sigma", s.query_descriptor_sigma);
        get("distractor_fraction", s.distractor_fraction);
        get("distractors_per_query", s.distractors_per_query);
        get("impostor_min_gap", s.impostor_min_gap);
        get("impostor_max_gap", s.impostor_max_gap);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("synth spec: ") + e.what());
    }
    s.validate();
    return s;
}

std::vector<std::uint32_t> match_vocabulary_clusters(const Fixture& fx, const Vocabulary& vocab) {
    std::uint32_t k_gen = 0;
    for (auto c : fx.truth.cell_labels) k_gen = std::max(k_gen, c + 1);
    std::vector<std::vector<std::size_t>> votes(k_gen, std::vector<std::size_t>(vocab.k, 0));
    for (const auto& map : fx.reference_maps) {
        const auto grid = assign_hard(vocab, map);
        for (std::size_t i = 0; i < grid.labels.size(); ++i) ++votes[fx.truth.cell_labels[i]][grid.labels[i]];
    }
    std::vector<std::uint32_t> out(k_gen);
    for (std::uint32_t c = 0; c < k_gen; ++c)
        out[c] = static_cast<std::uint32_t>(std::max_element(votes[c].begin(), votes[c].end()) - votes[c].begin());
    return out;
}

}  // namespace vpr::synth
