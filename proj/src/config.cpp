#include "vpr/config.hpp"

#include <algorithm>
#include <set>

#include <json.hpp>

#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"

namespace vpr {
namespace {

using json = nlohmann::json;

const std::set<std::string> kKnownKeys = {
    "k", "seed", "kmeans_max_iters", "kmeans_tol", "kmeans_sample_rows", "top_c", "mode", "top_x", "recall_ks",
    "positive_radius", "negative_radius", "ransac_threshold_px", "ransac_max_iters", "ransac_confidence",
    "ransac_seed", "intra_normalized_utility", "es_negatives_only"};

template <typename T>
void read_if(const json& doc, const char* key, T& out) {
    if (doc.contains(key)) out = doc.at(key).get<T>();
}

template <typename T>
void read_optional(const json& doc, const char* key, std::optional<T>& out) {
    if (!doc.contains(key)) return;
    if (doc.at(key).is_null())
        out.reset();
    else
        out = doc.at(key).get<T>();
}

}  // namespace

GeoConfig RunConfig::geo() const {
    return {positive_radius, negative_radius.value_or(2.0 * positive_radius)};
}

UtilityOptions RunConfig::utility_options() const {
    return {intra_normalized_utility ? ResidualSource::IntraNormalized : ResidualSource::Raw,
            es_negatives_only ? EsPairing::NegativesOnly : EsPairing::AllPairs};
}

RansacOptions RunConfig::ransac_options() const {
    return {ransac_threshold_px, ransac_max_iters, ransac_confidence, ransac_seed};
}

KMeansOptions RunConfig::kmeans_options() const { return {k, seed, kmeans_max_iters, kmeans_tol}; }

std::optional<std::int64_t> RunConfig::effective_top_x() const {
    if (top_x) return top_x;
    if (mode == FilterMode::PS) return kDefaultPsTopX;
    return std::nullopt;
}

void RunConfig::validate() const {
    if (k < 2) throw ParameterError("config: k must be >= 2");
    if (kmeans_max_iters == 0) throw ParameterError("config: kmeans_max_iters must be positive");
    if (!(kmeans_tol >= 0.0)) throw ParameterError("config: kmeans_tol must be >= 0");
    if (top_c < 1) throw ParameterError("config: top_c must be >= 1");
    if (top_x && *top_x <= 0) throw ParameterError("config: top_x must be positive");
    if (recall_ks.empty()) throw ParameterError("config: recall_ks must not be empty");
    if (!std::is_sorted(recall_ks.begin(), recall_ks.end()) ||
        std::adjacent_find(recall_ks.begin(), recall_ks.end()) != recall_ks.end() || recall_ks.front() == 0)
        throw ParameterError("config: recall_ks must be positive and strictly ascending");
    geo().validate();
    if (!(ransac_threshold_px > 0.0)) throw ParameterError("config: ransac_threshold_px must be positive");
    if (!(ransac_confidence > 0.0 && ransac_confidence < 1.0))
        throw ParameterError("config: ransac_confidence must lie in (0, 1)");
}

std::string run_config_to_json(const RunConfig& c, int indent) {
    json doc;
    doc["k"] = c.k;
    doc["seed"] = c.seed;
    doc["kmeans_max_iters"] = c.kmeans_max_iters;
    doc["kmeans_tol"] = c.kmeans_tol;
    doc["kmeans_sample_rows"] = c.kmeans_sample_rows;
    doc["top_c"] = c.top_c;
    doc["mode"] = to_string(c.mode);
    doc["top_x"] = c.top_x ? json(*c.top_x) : json(nullptr);
    doc["recall_ks"] = c.recall_ks;
    doc["positive_radius"] = c.positive_radius;
    doc["negative_radius"] = c.negative_radius ? json(*c.negative_radius) : json(nullptr);
    doc["ransac_threshold_px"] = c.ransac_threshold_px;
    doc["ransac_max_iters"] = c.ransac_max_iters;
    doc["ransac_confidence"] = c.ransac_confidence;
    doc["ransac_seed"] = c.ransac_seed;
    doc["intra_normalized_utility"] = c.intra_normalized_utility;
    doc["es_negatives_only"] = c.es_negatives_only;
    return doc.dump(indent);
}

RunConfig run_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw SchemaError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!doc.is_object()) throw SchemaError("config: expected a JSON object");
    for (const auto& item : doc.items())
        if (!kKnownKeys.count(item.key())) throw SchemaError("config: unknown key '" + item.key() + "'");

    RunConfig c;
    try {
        read_if(doc, "k", c.k);
        read_if(doc, "seed", c.seed);
        read_if(doc, "kmeans_max_iters", c.kmeans_max_iters);
        read_if(doc, "kmeans_tol", c.kmeans_tol);
        read_if(doc, "kmeans_sample_rows", c.kmeans_sample_rows);
        read_if(doc, "top_c", c.top_c);
        if (doc.contains("mode")) c.mode = parse_filter_mode(doc.at("mode").get<std::string>());
        read_optional(doc, "top_x", c.top_x);
        read_if(doc, "recall_ks", c.recall_ks);
        read_if(doc, "positive_radius", c.positive_radius);
        read_optional(doc, "negative_radius", c.negative_radius);
        read_if(doc, "ransac_threshold_px", c.ransac_threshold_px);
        read_if(doc, "ransac_max_iters", c.ransac_max_iters);
        read_if(doc, "ransac_confidence", c.ransac_confidence);
        read_if(doc, "ransac_seed", c.ransac_seed);
        read_if(doc, "intra_normalized_utility", c.intra_normalized_utility);
        read_if(doc, "es_negatives_only", c.es_negatives_only);
    } catch (const json::exception& e) {
        throw SchemaError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig read_run_config(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    return run_config_from_json(std::string(bytes.begin(), bytes.end()));
}

}  // namespace vpr
