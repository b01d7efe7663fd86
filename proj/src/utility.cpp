#include "vpr/utility.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vpr/error.hpp"
#include "vpr/log.hpp"
#include "vpr/parallel.hpp"

namespace vpr {
namespace {

constexpr double kEarthRadiusMeters = 6371000.0;

// Cluster rows in float64, optionally intra-normalized.
struct ClusterRows {
    std::uint32_t k = 0;
    std::uint32_t dim = 0;
    std::vector<std::vector<double>> rows;  // per place, k*dim

    std::span<const double> row(std::size_t place, std::uint32_t c) const {
        return {rows[place].data() + std::size_t{c} * dim, dim};
    }
};

ClusterRows cluster_rows(std::span<const VladVector> vlads, ResidualSource source) {
    ClusterRows out;
    if (vlads.empty()) return out;
    out.k = vlads[0].k;
    out.dim = vlads[0].dim;
    out.rows.reserve(vlads.size());
    for (const auto& v : vlads) {
        if (v.k != out.k || v.dim != out.dim || v.residuals.size() != std::size_t{v.k} * v.dim)
            throw ShapeError("utility: VLAD vectors disagree on (K, D)");
        std::vector<double> r(v.residuals.begin(), v.residuals.end());
        if (source == ResidualSource::IntraNormalized) {
            for (std::uint32_t c = 0; c < out.k; ++c) {
                double* row = r.data() + std::size_t{c} * out.dim;
                double norm = 0.0;
                for (std::uint32_t j = 0; j < out.dim; ++j) norm += row[j] * row[j];
                norm = std::max(std::sqrt(norm), kNormEpsilon);
                for (std::uint32_t j = 0; j < out.dim; ++j) row[j] /= norm;
            }
        }
        out.rows.push_back(std::move(r));
    }
    return out;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return std::sqrt(acc);
}

void check_negatives(std::size_t n, const std::vector<std::vector<std::size_t>>& negatives) {
    if (negatives.size() != n) throw ShapeError("utility: negatives list does not match place count");
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t j : negatives[a])
            if (j >= n || j == a) throw ShapeError("utility: invalid negative index for anchor " + std::to_string(a));
}

}  // namespace

void GeoConfig::validate() const {
    if (!(positive_radius > 0.0)) throw ParameterError("geo: positive_radius must be > 0");
    if (!(negative_radius >= positive_radius))
        throw ParameterError("geo: negative_radius must be >= positive_radius");
}

double haversine_meters(const GeoPosition& a, const GeoPosition& b) {
    constexpr double rad = std::numbers::pi / 180.0;
    const double dlat = (b.lat - a.lat) * rad;
    const double dlon = (b.lon - a.lon) * rad;
    const double h = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.lat * rad) * std::cos(b.lat * rad) * std::sin(dlon / 2) * std::sin(dlon / 2);
    return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(h)));
}

double position_distance(const Position& a, const Position& b) {
    if (a.index() != b.index()) throw EvaluationError("position kinds differ (geo vs frame)");
    if (const auto* ga = std::get_if<GeoPosition>(&a)) return haversine_meters(*ga, std::get<GeoPosition>(b));
    const auto fa = std::get<std::int64_t>(a), fb = std::get<std::int64_t>(b);
    return static_cast<double>(fa > fb ? fa - fb : fb - fa);
}

std::vector<std::size_t> find_negatives(const TraverseManifest& manifest, const GeoConfig& geo, std::size_t anchor) {
    geo.validate();
    if (anchor >= manifest.size()) throw ParameterError("find_negatives: anchor out of range");
    std::vector<std::size_t> out;
    const auto& origin = manifest.entries[anchor].position;
    for (std::size_t i = 0; i < manifest.size(); ++i) {
        if (i == anchor) continue;
        if (position_distance(origin, manifest.entries[i].position) > geo.negative_radius) out.push_back(i);
    }
    return out;
}

std::vector<std::vector<std::size_t>> find_all_negatives(const TraverseManifest& manifest, const GeoConfig& geo) {
    std::vector<std::vector<std::size_t>> out(manifest.size());
    for (std::size_t a = 0; a < manifest.size(); ++a) out[a] = find_negatives(manifest, geo, a);
    return out;
}

PlaceSpecificUtility place_specific_utility(std::span<const VladVector> vlads,
                                            const std::vector<std::vector<std::size_t>>& negatives,
                                            ResidualSource source) {
    const std::size_t n = vlads.size();
    check_negatives(n, negatives);
    const ClusterRows rows = cluster_rows(vlads, source);
    PlaceSpecificUtility out;
    out.values.assign(n, std::vector<std::optional<double>>(rows.k));
    out.rankable.assign(n, false);
    for (std::size_t a = 0; a < n; ++a) out.rankable[a] = !negatives[a].empty();
    parallel_for(n, [&](std::size_t a) {
        const auto& negs = negatives[a];
        if (negs.empty()) return;
        for (std::uint32_t c = 0; c < rows.k; ++c) {
            if (vlads[a].occupancy[c] == 0) continue;
            double sum = 0.0;
            for (std::size_t j : negs) sum += l2_distance(rows.row(a, c), rows.row(j, c));
            out.values[a][c] = sum / static_cast<double>(negs.size());
        }
    });
    return out;
}

TwoBinSplit segregate_two_bins(std::span<const double> values) {
    const std::size_t k = values.size();
    TwoBinSplit out;
    out.high.assign(k, true);
    if (k < 2) {
        out.degenerate = true;
        return out;
    }
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

    std::vector<double> prefix(k + 1, 0.0), prefix_sq(k + 1, 0.0);
    for (std::size_t i = 0; i < k; ++i) {
        const double v = values[order[i]];
        prefix[i + 1] = prefix[i] + v;
        prefix_sq[i + 1] = prefix_sq[i] + v * v;
    }
    auto sse = [&](std::size_t lo, std::size_t hi) {
        const double cnt = static_cast<double>(hi - lo);
        const double s = prefix[hi] - prefix[lo];
        return std::max(0.0, (prefix_sq[hi] - prefix_sq[lo]) - s * s / cnt);
    };

    std::size_t best_split = 0;
    double best_cost = 0.0;
    for (std::size_t s = 1; s < k; ++s) {
        if (!(values[order[s - 1]] < values[order[s]])) continue;
        const double cost = sse(0, s) + sse(s, k);
        if (best_split == 0 || cost < best_cost) {
            best_split = s;
            best_cost = cost;
        }
    }
    if (best_split == 0) {
        out.degenerate = true;
        return out;
    }
    for (std::size_t i = 0; i < best_split; ++i) out.high[order[i]] = false;
    return out;
}

EnvironmentSpecificUtility environment_specific_utility(std::span<const VladVector> vlads,
                                                        const std::vector<std::vector<std::size_t>>& negatives,
                                                        const UtilityOptions& options) {
    const std::size_t n = vlads.size();
    if (n < 2) throw ParameterError("ES utility needs at least 2 places");
    check_negatives(n, negatives);
    const ClusterRows rows = cluster_rows(vlads, options.source);

    // Per-anchor partial sums, reduced in anchor order.
    std::vector<std::vector<double>> partial(n, std::vector<double>(rows.k, 0.0));
    parallel_for(n, [&](std::size_t a) {
        auto& acc = partial[a];
        if (options.pairing == EsPairing::AllPairs) {
            // Distances are symmetric: take n > a and count each twice.
            for (std::size_t j = a + 1; j < n; ++j)
                for (std::uint32_t c = 0; c < rows.k; ++c) acc[c] += 2.0 * l2_distance(rows.row(a, c), rows.row(j, c));
        } else {
            for (std::size_t j : negatives[a])
                for (std::uint32_t c = 0; c < rows.k; ++c) acc[c] += l2_distance(rows.row(a, c), rows.row(j, c));
        }
    });
    EnvironmentSpecificUtility out;
    out.values.assign(rows.k, 0.0);
    for (std::size_t a = 0; a < n; ++a)
        for (std::uint32_t c = 0; c < rows.k; ++c) out.values[c] += partial[a][c];
    const double pairs = static_cast<double>(n) * static_cast<double>(n - 1);
    for (double& v : out.values) v /= pairs;

    out.bins = segregate_two_bins(out.values);
    if (out.bins.degenerate)
        log::warn("ES utilities are all equal; treating every cluster as high utility");
    return out;
}

std::vector<std::uint32_t> rank_clusters(std::span<const std::optional<double>> utilities) {
    std::vector<std::uint32_t> order;
    for (std::uint32_t c = 0; c < utilities.size(); ++c)
        if (utilities[c]) order.push_back(c);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::uint32_t a, std::uint32_t b) { return *utilities[a] > *utilities[b]; });
    return order;
}

std::uint32_t UtilityProfile::useful_cluster_count() const {
    return static_cast<std::uint32_t>(std::count(es_high_bin.begin(), es_high_bin.end(), true));
}

UtilityProfile compute_utility_profile(const TraverseManifest& manifest, std::span<const VladVector> vlads,
                                       const GeoConfig& geo, const UtilityOptions& options) {
    if (manifest.size() != vlads.size()) throw ShapeError("utility: manifest and VLAD counts differ");
    const auto negatives = find_all_negatives(manifest, geo);
    auto es = environment_specific_utility(vlads, negatives, options);
    auto ps = place_specific_utility(vlads, negatives, options.source);

    UtilityProfile p;
    p.k = vlads.empty() ? 0 : vlads[0].k;
    for (const auto& e : manifest.entries) p.image_ids.push_back(e.image_id);
    p.es_utility = std::move(es.values);
    p.es_high_bin = std::move(es.bins.high);
    p.es_degenerate = es.bins.degenerate;
    p.ps_utility = std::move(ps.values);
    p.ps_ranking.resize(manifest.size());
    p.negatives_count.resize(manifest.size());
    for (std::size_t a = 0; a < manifest.size(); ++a) {
        p.negatives_count[a] = negatives[a].size();
        if (ps.rankable[a]) p.ps_ranking[a] = rank_clusters(p.ps_utility[a]);
        else log::warn("place '" + p.image_ids[a] + "' has no negatives; PS utility undefined");
    }
    return p;
}

ClusterSelection select_clusters(const UtilityProfile& profile, std::size_t place, FilterMode mode,
                                 std::optional<std::int64_t> top_x) {
    if (place >= profile.places()) throw ParameterError("select_clusters: place out of range");
    if (top_x && *top_x <= 0) throw ParameterError("select_clusters: top_x must be positive");
    ClusterSelection out;
    auto es_set = [&] {
        std::vector<std::uint32_t> s;
        for (std::uint32_t c = 0; c < profile.k; ++c)
            if (profile.es_high_bin[c]) s.push_back(c);
        return s;
    };
    auto ps_top = [&](std::int64_t x) {
        if (!profile.rankable(place))
            throw ParameterError("select_clusters: place '" + profile.image_ids[place] + "' is not rankable");
        const auto& rank = profile.ps_ranking[place];
        const auto count = std::min<std::size_t>(rank.size(), static_cast<std::size_t>(x));
        std::vector<std::uint32_t> s(rank.begin(), rank.begin() + static_cast<std::ptrdiff_t>(count));
        std::sort(s.begin(), s.end());
        return s;
    };

    switch (mode) {
        case FilterMode::Vanilla:
            out.clusters.resize(profile.k);
            std::iota(out.clusters.begin(), out.clusters.end(), 0u);
            break;
        case FilterMode::ES:
            out.clusters = es_set();
            break;
        case FilterMode::PS:
            if (!top_x) throw ParameterError("select_clusters: PS mode needs top_x");
            out.clusters = ps_top(*top_x);
            break;
        case FilterMode::Combined: {
            const std::int64_t x =
                top_x ? *top_x : std::max<std::int64_t>(1, std::int64_t{profile.useful_cluster_count()} - 1);
            const auto ps = ps_top(x);
            const auto es = es_set();
            std::set_intersection(ps.begin(), ps.end(), es.begin(), es.end(), std::back_inserter(out.clusters));
            if (out.clusters.empty()) {
                log::info("combined selection empty at '" + profile.image_ids[place] + "'; using ES set");
                out.clusters = es;
                out.fell_back_to_es = true;
            }
            break;
        }
    }
    return out;
}

std::string utility_report_json(const UtilityProfile& profile, int indent) {
    using json = nlohmann::json;
    json doc;
    doc["es_utility"] = profile.es_utility;
    json bins = json::array();
    for (bool b : profile.es_high_bin) bins.push_back(b);
    doc["es_high_bin"] = std::move(bins);
    json places = json::array();
    for (std::size_t a = 0; a < profile.places(); ++a) {
        json p;
        p["image_id"] = profile.image_ids[a];
        json ps = json::array();
        for (const auto& u : profile.ps_utility[a]) ps.push_back(u ? json(*u) : json(nullptr));
        p["ps_utility"] = std::move(ps);
        p["ranking"] = profile.ps_ranking[a];
        places.push_back(std::move(p));
    }
    doc["per_place"] = std::move(places);
    return doc.dump(indent);
}

std::string utility_es_table(const UtilityProfile& profile) {
    std::ostringstream os;
    os << std::left << std::setw(9) << "cluster" << std::right << std::setw(16) << "es_utility" << "  bin\n";
    for (std::uint32_t c = 0; c < profile.k; ++c) {
        os << std::left << std::setw(9) << c << std::right << std::setw(16) << std::setprecision(6) << std::fixed
           << profile.es_utility[c] << "  " << (profile.es_high_bin[c] ? "high" : "dustbin") << '\n';
    }
    os << "useful clusters (X'): " << profile.useful_cluster_count() << " of " << profile.k << '\n';
    return os.str();
}

std::string to_string(FilterMode mode) {
    switch (mode) {
        case FilterMode::Vanilla: return "vanilla";
        case FilterMode::ES: return "es";
        case FilterMode::PS: return "ps";
        case FilterMode::Combined: return "combined";
    }
    return "unknown";
}

FilterMode parse_filter_mode(const std::string& name) {
    if (name == "vanilla") return FilterMode::Vanilla;
    if (name == "es") return FilterMode::ES;
    if (name == "ps") return FilterMode::PS;
    if (name == "combined") return FilterMode::Combined;
    throw ParameterError("unknown mode '" + name + "' (expected vanilla, es, ps or combined)");
}

}  // namespace vpr
