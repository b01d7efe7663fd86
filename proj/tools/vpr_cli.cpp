// vpr: command-line driver for the utility-guided place recognition pipeline.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vpr/config.hpp"
#include "vpr/error.hpp"
#include "vpr/feature_store.hpp"
#include "vpr/keypoint_filter.hpp"
#include "vpr/log.hpp"
#include "vpr/matcher.hpp"
#include "vpr/pipeline.hpp"
#include "vpr/synth.hpp"
#include "vpr/utility.hpp"
#include "vpr/vlad.hpp"
#include "vpr/vocabulary.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

/// Flag values that, when given, override the config file.
struct Overrides {
    std::string config_path;
    std::uint32_t k = 0;
    std::uint64_t seed = 0;
    std::uint32_t kmeans_max_iters = 0;
    double kmeans_tol = 0;
    std::uint64_t sample_rows = 0;
    std::uint32_t top_c = 0;
    std::string mode;
    std::int64_t top_x = 0;
    std::vector<std::uint32_t> recall_ks;
    double radius = 0;
    double negative_radius = 0;
    double ransac_threshold = 0;
    std::uint32_t ransac_iters = 0;
    std::uint64_t ransac_seed = 0;
    bool intra_norm = false;
    bool es_negatives_only = false;

    std::vector<std::function<void(vpr::RunConfig&)>> apply;

    template <typename T, typename F>
    void bind(CLI::App* app, const std::string& name, T& storage, const std::string& help, F setter) {
        auto* opt = app->add_option(name, storage, help);
        apply.push_back([opt, &storage, setter](vpr::RunConfig& c) {
            if (opt->count() > 0) setter(c, storage);
        });
    }

    vpr::RunConfig resolve() const {
        vpr::RunConfig c = config_path.empty() ? vpr::RunConfig{} : vpr::read_run_config(config_path);
        for (const auto& f : apply) f(c);
        c.validate();
        return c;
    }
};

void add_vocab_flags(CLI::App* app, Overrides& o) {
    o.bind(app, "--k", o.k, "vocabulary size", [](auto& c, auto v) { c.k = v; });
    o.bind(app, "--max-iters", o.kmeans_max_iters, "k-means iteration cap",
           [](auto& c, auto v) { c.kmeans_max_iters = v; });
    o.bind(app, "--tol", o.kmeans_tol, "k-means relative inertia tolerance", [](auto& c, auto v) { c.kmeans_tol = v; });
    o.bind(app, "--sample-rows", o.sample_rows, "rows sampled for k-means (0 = all)",
           [](auto& c, auto v) { c.kmeans_sample_rows = v; });
}

void add_utility_flags(CLI::App* app, Overrides& o) {
    o.bind(app, "--radius", o.radius, "positive localization radius (meters or frames)",
           [](auto& c, auto v) { c.positive_radius = v; });
    o.bind(app, "--negative-radius", o.negative_radius, "negative radius (default 2x radius)",
           [](auto& c, auto v) { c.negative_radius = v; });
    auto* intra = app->add_flag("--intra-norm", o.intra_norm, "compute utility on intra-normalized residuals");
    auto* negs = app->add_flag("--es-negatives-only", o.es_negatives_only, "ES sums over negatives only");
    o.apply.push_back([intra, negs, &o](vpr::RunConfig& c) {
        if (intra->count() > 0) c.intra_normalized_utility = o.intra_norm;
        if (negs->count() > 0) c.es_negatives_only = o.es_negatives_only;
    });
}

void add_retrieval_flags(CLI::App* app, Overrides& o) {
    o.bind(app, "--top-c", o.top_c, "global candidates passed to re-ranking", [](auto& c, auto v) { c.top_c = v; });
    o.bind(app, "--mode", o.mode, "vanilla | es | ps | combined",
           [](auto& c, const auto& v) { c.mode = vpr::parse_filter_mode(v); });
    o.bind(app, "--top-x", o.top_x, "PS / combined cluster cutoff", [](auto& c, auto v) { c.top_x = v; });
    o.bind(app, "--recall-ks", o.recall_ks, "Recall@K values, ascending",
           [](auto& c, const auto& v) { c.recall_ks = v; });
    o.bind(app, "--ransac-threshold", o.ransac_threshold, "RANSAC inlier threshold in pixels",
           [](auto& c, auto v) { c.ransac_threshold_px = v; });
    o.bind(app, "--ransac-iters", o.ransac_iters, "RANSAC iteration cap", [](auto& c, auto v) { c.ransac_max_iters = v; });
    o.bind(app, "--ransac-seed", o.ransac_seed, "RANSAC sampling seed", [](auto& c, auto v) { c.ransac_seed = v; });
}

void print_json(const json& doc) { std::cout << doc.dump(2) << '\n'; }

vpr::Vocabulary load_or_train(const std::string& vocab_path, std::span<const vpr::DenseFeatureMap> maps,
                              const vpr::RunConfig& cfg) {
    if (!vocab_path.empty()) return vpr::read_vocabulary(vocab_path);
    return vpr::train_reference_vocabulary(maps, cfg);
}

std::pair<std::int64_t, std::int64_t> parse_range(const std::string& text) {
    const auto dots = text.find("..");
    if (dots == std::string::npos) throw vpr::ParameterError("range must look like A..B, got '" + text + "'");
    std::int64_t a = 0, b = 0;
    const auto lhs = text.substr(0, dots), rhs = text.substr(dots + 2);
    if (std::from_chars(lhs.data(), lhs.data() + lhs.size(), a).ec != std::errc{} ||
        std::from_chars(rhs.data(), rhs.data() + rhs.size(), b).ec != std::errc{})
        throw vpr::ParameterError("range must look like A..B, got '" + text + "'");
    return {a, b};
}

void write_text(const std::string& path, const std::string& text) {
    vpr::write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Utility-guided hierarchical visual place recognition"};
    app.require_subcommand(1);
    Overrides o;
    bool as_json = false;
    bool verbose = false;

    // Every subcommand accepts the shared flags.
    auto common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config_path, "RunConfig JSON; flags override it");
        o.bind(sub, "--seed", o.seed, "seed for k-means and sampling", [](auto& c, auto v) { c.seed = v; });
        sub->add_flag("--json", as_json, "machine-readable output on stdout");
        sub->add_flag("-v,--verbose", verbose, "log progress to stderr");
    };

    std::string reference, queries, vocab_path, out, query_id, candidate_id, matches_path, spec_path, image_id,
        sweep_top_x, csv_path;
    std::vector<std::uint32_t> sweep_k;
    bool all_modes = false, labels_only = false;
    std::optional<std::uint32_t> landmark_period, places;

    auto* vocab_cmd = app.add_subcommand("vocab", "train the visual vocabulary on reference features");
    common(vocab_cmd);
    add_vocab_flags(vocab_cmd, o);
    vocab_cmd->add_option("--reference", reference, "reference manifest")->required();
    vocab_cmd->add_option("--out", out, "output .vprv file")->required();

    auto* encode_cmd = app.add_subcommand("encode", "encode reference images into VLAD files");
    common(encode_cmd);
    add_vocab_flags(encode_cmd, o);
    encode_cmd->add_option("--reference", reference, "manifest to encode")->required();
    encode_cmd->add_option("--vocab", vocab_path, "vocabulary file (trained on the fly if omitted)");
    encode_cmd->add_option("--out", out, "output directory for .vpre files")->required();

    auto* utility_cmd = app.add_subcommand("utility", "estimate ES / PS cluster utility of a reference map");
    common(utility_cmd);
    add_vocab_flags(utility_cmd, o);
    add_utility_flags(utility_cmd, o);
    utility_cmd->add_option("--reference", reference, "reference manifest")->required();
    utility_cmd->add_option("--vocab", vocab_path, "vocabulary file (trained on the fly if omitted)");
    utility_cmd->add_option("--out", out, "also write the JSON report here");

    auto* localize_cmd = app.add_subcommand("localize", "localize query images against the reference map");
    common(localize_cmd);
    add_vocab_flags(localize_cmd, o);
    add_utility_flags(localize_cmd, o);
    add_retrieval_flags(localize_cmd, o);
    localize_cmd->add_option("--reference", reference, "reference manifest")->required();
    localize_cmd->add_option("--queries", queries, "query manifest")->required();
    localize_cmd->add_option("--vocab", vocab_path, "vocabulary file (trained on the fly if omitted)");
    localize_cmd->add_option("--query-id", query_id, "only this query");
    localize_cmd->add_option("--matches", matches_path, "score external correspondences (JSON) instead of mutual NN");
    localize_cmd->add_option("--candidate-id", candidate_id, "reference image the --matches file refers to");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate Recall@K, storage and time ratios");
    common(eval_cmd);
    add_vocab_flags(eval_cmd, o);
    add_utility_flags(eval_cmd, o);
    add_retrieval_flags(eval_cmd, o);
    eval_cmd->add_option("--reference", reference, "reference manifest")->required();
    eval_cmd->add_option("--queries", queries, "query manifest")->required();
    eval_cmd->add_option("--vocab", vocab_path, "vocabulary file (trained on the fly if omitted)");
    eval_cmd->add_flag("--all-modes", all_modes, "evaluate vanilla, es, ps and combined");
    eval_cmd->add_option("--sweep-top-x", sweep_top_x, "top-X sweep range A..B (combined unless --mode ps)");
    eval_cmd->add_option("--sweep-k", sweep_k, "vocabulary sizes to sweep, e.g. 8 16 64 96 128")->delimiter(',');
    eval_cmd->add_option("--csv", csv_path, "write sweep CSV here instead of stdout");

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic fixture directory");
    common(synth_cmd);
    synth_cmd->add_option("--spec", spec_path, "SynthSpec JSON (defaults otherwise)");
    synth_cmd->add_option("--out", out, "output directory")->required();
    synth_cmd->add_option("--landmark-period", landmark_period, "inject a landmark on the last unique cluster every t places");
    synth_cmd->add_option("--places", places, "number of places");

    auto* viz_cmd = app.add_subcommand("viz", "render a reference image's kept-cluster mask as PGM");
    common(viz_cmd);
    add_vocab_flags(viz_cmd, o);
    add_utility_flags(viz_cmd, o);
    add_retrieval_flags(viz_cmd, o);
    viz_cmd->add_option("--reference", reference, "reference manifest")->required();
    viz_cmd->add_option("--vocab", vocab_path, "vocabulary file (trained on the fly if omitted)");
    viz_cmd->add_option("--image-id", image_id, "reference image to render")->required();
    viz_cmd->add_option("--out", out, "output .pgm")->required();
    viz_cmd->add_flag("--labels", labels_only, "write raw cluster labels instead of the selection mask");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }
    vpr::log::set_level(verbose ? vpr::log::Level::Info : vpr::log::Level::Warn);

    try {
        const vpr::RunConfig cfg = o.resolve();

        if (*vocab_cmd) {
            const auto manifest = vpr::read_manifest(reference);
            const auto maps = vpr::load_feature_maps(manifest);
            const auto vocab = vpr::train_reference_vocabulary(maps, cfg);
            vpr::write_vocabulary(vocab, out);
            if (as_json)
                print_json({{"k", vocab.k}, {"dim", vocab.dim}, {"seed", vocab.seed}, {"inertia", vocab.inertia}, {"out", out}});
            else
                std::cout << "vocabulary k=" << vocab.k << " dim=" << vocab.dim << " inertia=" << vocab.inertia
                          << " -> " << out << '\n';
            return 0;
        }

        if (*encode_cmd) {
            const auto manifest = vpr::read_manifest(reference);
            const auto maps = vpr::load_feature_maps(manifest);
            const auto vocab = load_or_train(vocab_path, maps, cfg);
            json files = json::array();
            for (std::size_t i = 0; i < maps.size(); ++i) {
                auto vlad = vpr::encode(vocab, maps[i]);
                const auto path = fs::path(out) / (manifest.entries[i].image_id + ".vpre");
                vpr::write_vlad(vlad, path);
                files.push_back(path.string());
            }
            if (as_json)
                print_json({{"encoded", maps.size()}, {"files", files}});
            else
                std::cout << "encoded " << maps.size() << " images into " << out << '\n';
            return 0;
        }

        if (*utility_cmd) {
            const auto manifest = vpr::read_manifest(reference);
            const auto maps = vpr::load_feature_maps(manifest);
            const auto vocab = load_or_train(vocab_path, maps, cfg);
            std::vector<vpr::VladVector> vlads;
            for (const auto& m : maps) vlads.push_back(vpr::encode(vocab, m));
            const auto profile = vpr::compute_utility_profile(manifest, vlads, cfg.geo(), cfg.utility_options());
            const auto report = vpr::utility_report_json(profile);
            if (!out.empty()) write_text(out, report);
            if (as_json)
                std::cout << report << '\n';
            else
                std::cout << vpr::utility_es_table(profile);
            return 0;
        }

        if (*localize_cmd) {
            const auto data = vpr::load_dataset(reference, queries);
            auto vocab = load_or_train(vocab_path, data.reference_maps, cfg);
            const auto run = vpr::prepare_run(data, cfg, std::move(vocab));
            const auto filtered = vpr::filter_reference(run.reference, &run.profile, cfg.mode, cfg.effective_top_x());

            if (!matches_path.empty()) {
                if (query_id.empty() || candidate_id.empty())
                    throw vpr::ParameterError("--matches needs --query-id and --candidate-id");
                const auto bytes = vpr::read_file_bytes(matches_path);
                auto pairs = vpr::parse_correspondences_json(std::string(bytes.begin(), bytes.end()));
                const vpr::Query* q = nullptr;
                for (const auto& cand : run.queries)
                    if (cand.image_id == query_id) q = &cand;
                std::size_t ref_index = run.reference.size();
                for (std::size_t i = 0; i < run.reference.size(); ++i)
                    if (run.reference.manifest.entries[i].image_id == candidate_id) ref_index = i;
                if (!q || ref_index == run.reference.size()) throw vpr::ParameterError("unknown query or candidate id");
                const auto result = vpr::verify_correspondences(q->keypoints, filtered.keypoints[ref_index],
                                                                std::move(pairs), cfg.ransac_options());
                print_json({{"query_id", result.query_id},
                            {"candidate_id", result.candidate_id},
                            {"inliers", result.inliers},
                            {"p_q", result.query_count},
                            {"p_c", result.candidate_count},
                            {"score", result.score}});
                return 0;
            }

            json results = json::array();
            for (const auto& q : run.queries) {
                if (!query_id.empty() && q.image_id != query_id) continue;
                const auto loc = vpr::localize(q, run.reference, filtered, cfg);
                json cands = json::array();
                for (std::size_t i = 0; i < loc.candidates.size(); ++i) {
                    json c{{"image_id", run.reference.manifest.entries[loc.candidates[i].index].image_id},
                           {"global_distance", loc.candidates[i].distance}};
                    if (!loc.matches.empty()) {
                        c["inliers"] = loc.matches[i].inliers;
                        c["score"] = loc.matches[i].score;
                    }
                    cands.push_back(std::move(c));
                }
                results.push_back({{"query_id", q.image_id},
                                   {"final_match_id", run.reference.manifest.entries[loc.final_index].image_id},
                                   {"global_fallback", loc.global_fallback},
                                   {"candidates", std::move(cands)}});
            }
            if (!query_id.empty() && results.empty()) throw vpr::ParameterError("unknown query id '" + query_id + "'");
            if (as_json) {
                print_json(results);
            } else {
                for (const auto& r : results)
                    std::cout << r["query_id"].get<std::string>() << " -> " << r["final_match_id"].get<std::string>()
                              << '\n';
            }
            return 0;
        }

        if (*eval_cmd) {
            const auto data = vpr::load_dataset(reference, queries);
            if (!sweep_k.empty()) {
                const auto rows = vpr::sweep_vocabulary(data, cfg, sweep_k);
                const auto csv = vpr::sweep_csv(rows, "k");
                if (csv_path.empty()) std::cout << csv; else write_text(csv_path, csv);
                return 0;
            }
            auto vocab = load_or_train(vocab_path, data.reference_maps, cfg);
            const auto run = vpr::prepare_run(data, cfg, std::move(vocab));
            if (!sweep_top_x.empty()) {
                const auto [first, last] = parse_range(sweep_top_x);
                const auto rows = vpr::sweep_top_x(run, cfg, first, last);
                const auto csv = vpr::sweep_csv(rows, "top_x");
                if (csv_path.empty()) std::cout << csv; else write_text(csv_path, csv);
                return 0;
            }
            std::vector<vpr::EvalReport> reports;
            if (all_modes) {
                for (auto mode : {vpr::FilterMode::Vanilla, vpr::FilterMode::ES, vpr::FilterMode::PS,
                                  vpr::FilterMode::Combined}) {
                    vpr::RunConfig c = cfg;
                    c.mode = mode;
                    if (mode != cfg.mode) c.top_x.reset();
                    reports.push_back(vpr::evaluate(run.queries, run.reference, &run.profile, c));
                }
            } else {
                reports.push_back(vpr::evaluate(run.queries, run.reference, &run.profile, cfg));
            }
            if (as_json) {
                json arr = json::array();
                for (const auto& r : reports) arr.push_back(json::parse(vpr::eval_report_json(r)));
                print_json(reports.size() == 1 ? arr[0] : arr);
            } else {
                std::cout << vpr::eval_table(reports);
            }
            return 0;
        }

        if (*synth_cmd) {
            vpr::synth::SynthSpec spec;
            if (!spec_path.empty()) {
                const auto bytes = vpr::read_file_bytes(spec_path);
                spec = vpr::synth::spec_from_json(std::string(bytes.begin(), bytes.end()));
            }
            for (const auto* opt : synth_cmd->get_options())
                if (opt->get_name() == "--seed" && opt->count() > 0) spec.seed = cfg.seed;
            if (places) spec.n_places = *places;
            if (landmark_period) spec.landmark = vpr::synth::LandmarkSpec{spec.unique_clusters.back(), *landmark_period};
            const auto fixture = vpr::synth::generate(spec);
            vpr::synth::write_fixture(fixture, out);
            write_text((fs::path(out) / "spec.json").string(), vpr::synth::spec_to_json(spec));
            if (as_json)
                print_json({{"out", out}, {"places", spec.n_places}, {"reference", (fs::path(out) / "reference.json").string()},
                            {"queries", (fs::path(out) / "query.json").string()}});
            else
                std::cout << "wrote " << spec.n_places << "-place fixture to " << out << '\n';
            return 0;
        }

        if (*viz_cmd) {
            const auto manifest = vpr::read_manifest(reference);
            const auto maps = vpr::load_feature_maps(manifest);
            const auto vocab = load_or_train(vocab_path, maps, cfg);
            std::size_t index = manifest.size();
            for (std::size_t i = 0; i < manifest.size(); ++i)
                if (manifest.entries[i].image_id == image_id) index = i;
            if (index == manifest.size()) throw vpr::ParameterError("unknown image id '" + image_id + "'");
            const auto kps = vpr::read_keypoints(manifest.keypoint_file(index), image_id);
            const auto grid = vpr::assign_hard(vocab, maps[index]);
            const auto mask = vpr::upscale_mask(grid, kps.image_h, kps.image_w, image_id);
            std::string pgm;
            std::vector<std::uint32_t> selected;
            if (labels_only) {
                pgm = vpr::label_pgm(mask);
            } else {
                std::vector<vpr::VladVector> vlads;
                for (const auto& m : maps) vlads.push_back(vpr::encode(vocab, m));
                const auto profile = vpr::compute_utility_profile(manifest, vlads, cfg.geo(), cfg.utility_options());
                selected = vpr::select_clusters(profile, index, cfg.mode, cfg.effective_top_x()).clusters;
                pgm = vpr::selection_pgm(mask, selected);
            }
            write_text(out, pgm);
            if (as_json) print_json({{"out", out}, {"image_id", image_id}, {"selected_clusters", selected}});
            else std::cout << "wrote " << out << '\n';
            return 0;
        }
    } catch (const vpr::ParameterError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const vpr::Error& e) {
        json err{{"error", e.what()}};
        if (as_json) std::cout << err.dump() << '\n';
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
