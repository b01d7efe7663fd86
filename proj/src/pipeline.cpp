#include "vpr/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "vpr/error.hpp"
#include "vpr/log.hpp"
#include "vpr/parallel.hpp"

namespace vpr {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::vector<VladVector> encode_all(std::span<const DenseFeatureMap> maps, const Vocabulary& vocab,
                                   std::vector<ClusterAssignmentGrid>* grids) {
    std::vector<VladVector> vlads(maps.size());
    std::vector<ClusterAssignmentGrid> local(maps.size());
    parallel_for(maps.size(), [&](std::size_t i) {
        local[i] = assign_hard(vocab, maps[i]);
        vlads[i] = encode(vocab, maps[i], local[i]);
    });
    if (grids) *grids = std::move(local);
    return vlads;
}

void check_alignment(const TraverseManifest& manifest, std::size_t maps, std::size_t keypoints) {
    if (manifest.size() != maps || manifest.size() != keypoints)
        throw ShapeError("manifest '" + manifest.name + "' lists " + std::to_string(manifest.size()) +
                         " images but " + std::to_string(maps) + " feature maps and " + std::to_string(keypoints) +
                         " keypoint sets were given");
}

}  // namespace

ReferenceMap build_reference_map(const TraverseManifest& manifest, std::span<const DenseFeatureMap> maps,
                                 std::vector<KeypointSet> keypoints, const Vocabulary& vocab) {
    check_alignment(manifest, maps.size(), keypoints.size());
    ReferenceMap ref;
    ref.manifest = manifest;
    ref.vlads = encode_all(maps, vocab, &ref.grids);
    for (std::size_t i = 0; i < maps.size(); ++i) ref.vlads[i].image_id = manifest.entries[i].image_id;
    ref.keypoints = std::move(keypoints);
    return ref;
}

std::vector<Query> build_queries(const TraverseManifest& manifest, std::span<const DenseFeatureMap> maps,
                                 std::vector<KeypointSet> keypoints, const Vocabulary& vocab) {
    check_alignment(manifest, maps.size(), keypoints.size());
    auto vlads = encode_all(maps, vocab, nullptr);
    std::vector<Query> out;
    out.reserve(maps.size());
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const auto& e = manifest.entries[i];
        vlads[i].image_id = e.image_id;
        out.push_back({e.image_id, e.position, std::move(vlads[i]), std::move(keypoints[i])});
    }
    return out;
}

double FilteredReference::storage_ratio() const {
    std::size_t kept = 0, total = 0;
    for (std::size_t i = 0; i < keypoints.size(); ++i) {
        kept += keypoints[i].size();
        total += original_counts[i];
    }
    return total == 0 ? 1.0 : static_cast<double>(kept) / static_cast<double>(total);
}

FilteredReference filter_reference(const ReferenceMap& ref, const UtilityProfile* profile, FilterMode mode,
                                   std::optional<std::int64_t> top_x) {
    if (mode != FilterMode::Vanilla && !profile)
        throw EvaluationError("filter_reference: mode '" + to_string(mode) + "' needs a utility profile");
    if (profile && profile->places() != ref.size())
        throw ShapeError("filter_reference: profile covers a different reference map");
    FilteredReference out;
    out.mode = mode;
    out.keypoints.resize(ref.size());
    out.original_counts.resize(ref.size());
    out.fell_back.assign(ref.size(), false);
    for (std::size_t i = 0; i < ref.size(); ++i) {
        const auto& kps = ref.keypoints[i];
        out.original_counts[i] = kps.size();
        if (mode == FilterMode::Vanilla) {
            out.keypoints[i] = kps;
            continue;
        }
        const bool needs_rank = mode == FilterMode::PS || mode == FilterMode::Combined;
        if (needs_rank && !profile->rankable(i)) {
            log::info("reference '" + kps.image_id + "' is unrankable; keeping all keypoints");
            out.keypoints[i] = kps;
            out.fell_back[i] = true;
            continue;
        }
        const auto selection = select_clusters(*profile, i, mode, top_x);
        const auto filtered = filter_keypoints(kps, ref.grids[i], selection.clusters);
        if (filtered.kept_count() == 0 && kps.size() > 0) {
            log::info("filter emptied reference '" + kps.image_id + "'; keeping all keypoints");
            out.keypoints[i] = kps;
            out.fell_back[i] = true;
            continue;
        }
        out.keypoints[i] = apply_filter(kps, filtered);
    }
    return out;
}

std::vector<Candidate> global_retrieve(std::span<const float> query_desc, std::span<const VladVector> references,
                                       std::uint32_t top_c) {
    std::vector<Candidate> all(references.size());
    for (std::size_t i = 0; i < references.size(); ++i) {
        const auto& d = references[i].global_desc;
        if (d.size() != query_desc.size()) throw ShapeError("global_retrieve: descriptor lengths differ");
        double acc = 0.0;
        for (std::size_t j = 0; j < d.size(); ++j) {
            const double diff = static_cast<double>(query_desc[j]) - static_cast<double>(d[j]);
            acc += diff * diff;
        }
        all[i] = {i, std::sqrt(acc)};
    }
    const std::size_t keep = std::min<std::size_t>(top_c, all.size());
    auto less = [](const Candidate& a, const Candidate& b) {
        return a.distance < b.distance || (a.distance == b.distance && a.index < b.index);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), less);
    all.resize(keep);
    return all;
}

Localization rerank(const Query& query, std::vector<Candidate> candidates, const FilteredReference& filtered,
                    const RansacOptions& ransac) {
    Localization out;
    out.candidates = std::move(candidates);
    if (out.candidates.empty()) throw EvaluationError("rerank: no candidates");
    if (query.keypoints.size() == 0) {
        log::info("query '" + query.image_id + "' has no keypoints; using global top-1");
        out.final_index = out.candidates.front().index;
        out.global_fallback = true;
        return out;
    }
    out.matches.reserve(out.candidates.size());
    std::size_t best = 0;
    for (std::size_t i = 0; i < out.candidates.size(); ++i) {
        out.matches.push_back(match_pair(query.keypoints, filtered.keypoints.at(out.candidates[i].index), ransac));
        if (out.matches[i].score > out.matches[best].score) best = i;
    }
    out.final_index = out.candidates[best].index;
    return out;
}

Localization localize(const Query& query, const ReferenceMap& ref, const FilteredReference& filtered,
                      const RunConfig& config) {
    return rerank(query, global_retrieve(query.vlad.global_desc, ref.vlads, config.top_c), filtered,
                  config.ransac_options());
}

EvalReport evaluate(std::span<const Query> queries, const ReferenceMap& ref, const UtilityProfile* profile,
                    const RunConfig& config) {
    config.validate();
    if (ref.size() == 0) throw EvaluationError("evaluate: empty reference map");
    const auto geo = config.geo();
    const auto top_x = config.effective_top_x();
    const auto ransac = config.ransac_options();

    EvalReport report;
    report.mode = config.mode;
    report.top_x = top_x;
    const FilteredReference filtered = filter_reference(ref, profile, config.mode, top_x);
    std::optional<FilteredReference> vanilla;
    if (config.mode != FilterMode::Vanilla) vanilla = filter_reference(ref, nullptr, FilterMode::Vanilla, {});
    report.storage_ratio = config.mode == FilterMode::Vanilla ? 1.0 : filtered.storage_ratio();

    const std::uint32_t max_k = config.recall_ks.back();
    const std::uint32_t retrieve_count = std::max(config.top_c, max_k);
    std::map<std::uint32_t, std::size_t> hits;
    for (auto k : config.recall_ks) hits[k] = 0;

    for (const auto& q : queries) {
        auto t0 = Clock::now();
        auto ranked = global_retrieve(q.vlad.global_desc, ref.vlads, retrieve_count);
        report.global_seconds += seconds_since(t0);

        std::vector<Candidate> shortlist(
            ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(config.top_c, ranked.size())));
        t0 = Clock::now();
        const auto loc = rerank(q, shortlist, filtered, ransac);
        report.local_seconds += seconds_since(t0);
        if (vanilla) {
            t0 = Clock::now();
            (void)rerank(q, shortlist, *vanilla, ransac);
            report.vanilla_local_seconds += seconds_since(t0);
        }

        std::vector<std::size_t> predictions{loc.final_index};
        for (const auto& c : ranked)
            if (c.index != loc.final_index) predictions.push_back(c.index);

        auto is_correct = [&](std::size_t ref_index) {
            return position_distance(q.position, ref.manifest.entries[ref_index].position) <= geo.positive_radius;
        };
        std::size_t first_correct = predictions.size();
        for (std::size_t r = 0; r < predictions.size(); ++r)
            if (is_correct(predictions[r])) {
                first_correct = r;
                break;
            }
        for (auto k : config.recall_ks)
            if (first_correct < k) ++hits[k];
        report.per_query.push_back({q.image_id, ref.manifest.entries[loc.final_index].image_id, first_correct == 0});
    }
    if (config.mode == FilterMode::Vanilla) report.vanilla_local_seconds = report.local_seconds;
    report.match_time_ratio = config.mode == FilterMode::Vanilla || report.vanilla_local_seconds <= 0.0
                                  ? 1.0
                                  : report.local_seconds / report.vanilla_local_seconds;
    for (auto k : config.recall_ks)
        report.recall_at_k[k] =
            queries.empty() ? 0.0 : static_cast<double>(hits[k]) / static_cast<double>(queries.size());
    return report;
}

std::string eval_report_json(const EvalReport& report, bool include_timing, int indent) {
    using json = nlohmann::json;
    json doc;
    doc["mode"] = to_string(report.mode);
    doc["top_x"] = report.top_x ? json(*report.top_x) : json(nullptr);
    json recall = json::object();
    for (const auto& [k, v] : report.recall_at_k) recall[std::to_string(k)] = v;
    doc["recall_at_k"] = std::move(recall);
    doc["storage_ratio"] = report.storage_ratio;
    json per = json::array();
    for (const auto& q : report.per_query)
        per.push_back({{"query_id", q.query_id}, {"final_match_id", q.final_match_id}, {"correct", q.correct}});
    doc["per_query"] = std::move(per);
    if (include_timing) {
        doc["match_time_ratio"] = report.match_time_ratio;
        doc["timing"] = {{"local_seconds", report.local_seconds},
                         {"vanilla_local_seconds", report.vanilla_local_seconds},
                         {"global_seconds", report.global_seconds}};
    }
    return doc.dump(indent);
}

std::string eval_table(std::span<const EvalReport> reports) {
    std::ostringstream os;
    os << std::left << std::setw(12) << "method" << std::right << std::setw(10) << "Recall@1" << std::setw(10)
       << "Storage" << std::setw(10) << "Time" << '\n';
    for (const auto& r : reports) {
        std::string name = to_string(r.mode);
        if (r.top_x && r.mode != FilterMode::Vanilla && r.mode != FilterMode::ES)
            name += "@" + std::to_string(*r.top_x);
        const auto it = r.recall_at_k.find(1);
        os << std::left << std::setw(12) << name << std::right << std::fixed << std::setprecision(2) << std::setw(10)
           << (it == r.recall_at_k.end() ? 0.0 : 100.0 * it->second) << std::setw(10) << r.storage_ratio
           << std::setw(10) << r.match_time_ratio << '\n';
    }
    return os.str();
}

Dataset load_dataset(const std::string& reference_manifest, const std::string& query_manifest) {
    Dataset d;
    d.reference = read_manifest(reference_manifest);
    d.reference_maps = load_feature_maps(d.reference);
    d.reference_keypoints = load_keypoint_sets(d.reference);
    d.queries = read_manifest(query_manifest);
    d.query_maps = load_feature_maps(d.queries);
    d.query_keypoints = load_keypoint_sets(d.queries);
    if (d.reference.position_kind != d.queries.position_kind)
        throw EvaluationError("reference and query manifests use different position kinds");
    return d;
}

Vocabulary train_reference_vocabulary(std::span<const DenseFeatureMap> maps, const RunConfig& config) {
    const auto rows = sample_descriptor_rows(maps, config.kmeans_sample_rows, config.seed);
    const std::uint32_t dim = maps.empty() ? 0 : maps.front().dim;
    return train_vocabulary({rows, dim}, config.kmeans_options());
}

PreparedRun prepare_run(const Dataset& data, const RunConfig& config) {
    return prepare_run(data, config, train_reference_vocabulary(data.reference_maps, config));
}

PreparedRun prepare_run(const Dataset& data, const RunConfig& config, Vocabulary vocab) {
    config.validate();
    PreparedRun run;
    run.vocab = std::move(vocab);
    run.reference = build_reference_map(data.reference, data.reference_maps, data.reference_keypoints, run.vocab);
    run.profile = compute_utility_profile(run.reference.manifest, run.reference.vlads, config.geo(),
                                          config.utility_options());
    run.queries = build_queries(data.queries, data.query_maps, data.query_keypoints, run.vocab);
    return run;
}

std::vector<SweepRow> sweep_top_x(const PreparedRun& run, const RunConfig& config, std::int64_t first,
                                  std::int64_t last) {
    if (first < 1 || last < first) throw ParameterError("sweep_top_x: need 1 <= first <= last");
    RunConfig cfg = config;
    if (cfg.mode != FilterMode::PS && cfg.mode != FilterMode::Combined) cfg.mode = FilterMode::Combined;
    std::vector<SweepRow> rows;
    for (std::int64_t x = first; x <= last; ++x) {
        cfg.top_x = x;
        rows.push_back({x, evaluate(run.queries, run.reference, &run.profile, cfg)});
    }
    return rows;
}

std::vector<SweepRow> sweep_vocabulary(const Dataset& data, const RunConfig& config,
                                       std::span<const std::uint32_t> sizes) {
    std::vector<SweepRow> rows;
    for (auto k : sizes) {
        RunConfig cfg = config;
        cfg.k = k;
        const auto run = prepare_run(data, cfg);
        rows.push_back({k, evaluate(run.queries, run.reference, &run.profile, cfg)});
    }
    return rows;
}

std::string sweep_csv(std::span<const SweepRow> rows, const std::string& x_name) {
    std::ostringstream os;
    os << x_name << ",mode";
    if (!rows.empty())
        for (const auto& [k, v] : rows.front().report.recall_at_k) os << ",recall_at_" << k;
    os << ",storage_ratio,match_time_ratio\n";
    os << std::setprecision(10);
    for (const auto& row : rows) {
        os << row.x << ',' << to_string(row.report.mode);
        for (const auto& [k, v] : row.report.recall_at_k) os << ',' << v;
        os << ',' << row.report.storage_ratio << ',' << row.report.match_time_ratio << '\n';
    }
    return os.str();
}

}  // namespace vpr
