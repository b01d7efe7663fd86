#include "vpr/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>
#include <string_view>
#include <unordered_set>

#include "binary_io.hpp"
#include "vpr/error.hpp"
#include "vpr/parallel.hpp"

namespace vpr {
namespace {

constexpr std::string_view kVocabMagic = "VPRV";
constexpr std::uint8_t kVocabVersion = 1;
constexpr std::size_t kChunkRows = 1024;

template <typename A, typename B>
double squared_distance(std::span<const A> a, std::span<const B> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

std::size_t count_distinct_rows(const DescriptorRows& rows, std::size_t enough) {
    std::unordered_set<std::string_view> seen;
    const auto* base = reinterpret_cast<const char*>(rows.data.data());
    const std::size_t row_bytes = std::size_t{rows.dim} * sizeof(float);
    for (std::size_t i = 0; i < rows.rows() && seen.size() < enough; ++i)
        seen.emplace(base + i * row_bytes, row_bytes);
    return seen.size();
}

// Centroids held in double while training.
struct Centers {
    std::uint32_t k;
    std::uint32_t dim;
    std::vector<double> values;

    std::span<const double> row(std::uint32_t c) const {
        return {values.data() + std::size_t{c} * dim, dim};
    }
    std::span<double> row(std::uint32_t c) { return {values.data() + std::size_t{c} * dim, dim}; }
};

Centers kmeans_pp_init(const DescriptorRows& rows, std::uint32_t k, std::mt19937_64& rng) {
    const std::size_t n = rows.rows();
    Centers centers{k, rows.dim, std::vector<double>(std::size_t{k} * rows.dim)};
    auto set_center = [&](std::uint32_t c, std::size_t i) {
        auto src = rows.row(i);
        std::copy(src.begin(), src.end(), centers.row(c).begin());
    };

    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    set_center(0, pick(rng));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = squared_distance(rows.row(i), std::span<const double>(centers.row(0)));

    for (std::uint32_t c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::uniform_real_distribution<double> u(0.0, total);
        const double target = u(rng);
        std::size_t chosen = n;
        double cum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            cum += d2[i];
            if (d2[i] > 0.0 && cum > target) {
                chosen = i;
                break;
            }
        }
        if (chosen == n) {
            // Rounding pushed target past the last increment.
            for (std::size_t i = n; i-- > 0;)
                if (d2[i] > 0.0) {
                    chosen = i;
                    break;
                }
        }
        set_center(c, chosen);
        for (std::size_t i = 0; i < n; ++i)
            d2[i] = std::min(d2[i], squared_distance(rows.row(i), std::span<const double>(centers.row(c))));
    }
    return centers;
}

struct ChunkStats {
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    double inertia = 0.0;
};

// One assignment pass. Per-chunk partials are reduced in chunk order so the
// result does not depend on scheduling.
double assign_pass(const DescriptorRows& rows, const Centers& centers, std::vector<std::uint32_t>& labels,
                   std::vector<double>& cost, std::vector<double>* sums, std::vector<std::size_t>* counts) {
    const std::size_t n = rows.rows();
    const std::size_t chunks = (n + kChunkRows - 1) / kChunkRows;
    std::vector<ChunkStats> stats(chunks);
    parallel_for(chunks, [&](std::size_t ch) {
        auto& st = stats[ch];
        if (sums) {
            st.sums.assign(std::size_t{centers.k} * centers.dim, 0.0);
            st.counts.assign(centers.k, 0);
        }
        const std::size_t end = std::min(n, (ch + 1) * kChunkRows);
        for (std::size_t i = ch * kChunkRows; i < end; ++i) {
            auto x = rows.row(i);
            std::uint32_t best = 0;
            double best_d = squared_distance(x, centers.row(0));
            for (std::uint32_t c = 1; c < centers.k; ++c) {
                const double d = squared_distance(x, centers.row(c));
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            labels[i] = best;
            cost[i] = best_d;
            st.inertia += best_d;
            if (sums) {
                double* s = st.sums.data() + std::size_t{best} * centers.dim;
                for (std::uint32_t j = 0; j < centers.dim; ++j) s[j] += x[j];
                ++st.counts[best];
            }
        }
    });
    double inertia = 0.0;
    if (sums) {
        sums->assign(std::size_t{centers.k} * centers.dim, 0.0);
        counts->assign(centers.k, 0);
    }
    for (const auto& st : stats) {
        inertia += st.inertia;
        if (sums) {
            for (std::size_t j = 0; j < st.sums.size(); ++j) (*sums)[j] += st.sums[j];
            for (std::size_t c = 0; c < st.counts.size(); ++c) (*counts)[c] += st.counts[c];
        }
    }
    return inertia;
}

}  // namespace

std::uint32_t Vocabulary::nearest(std::span<const float> x) const {
    std::uint32_t best = 0;
    double best_d = squared_distance(x, centroid(0));
    for (std::uint32_t c = 1; c < k; ++c) {
        const double d = squared_distance(x, centroid(c));
        if (d < best_d) {
            best_d = d;
            best = c;
        }
    }
    return best;
}

void Vocabulary::validate() const {
    if (k < 2) throw ShapeError("vocabulary: k must be >= 2");
    if (dim == 0) throw ShapeError("vocabulary: dim must be positive");
    if (centroids.size() != std::size_t{k} * dim) throw ShapeError("vocabulary: centroid array size mismatch");
    for (float v : centroids)
        if (!std::isfinite(v)) throw ShapeError("vocabulary: non-finite centroid");
    for (std::uint32_t a = 0; a < k; ++a)
        for (std::uint32_t b = a + 1; b < k; ++b)
            if (std::equal(centroid(a).begin(), centroid(a).end(), centroid(b).begin()))
                throw ShapeError("vocabulary: centroids " + std::to_string(a) + " and " + std::to_string(b) +
                                 " are identical");
}

Vocabulary train_vocabulary(const DescriptorRows& rows, const KMeansOptions& options,
                            std::vector<double>* inertia_trace) {
    if (options.k < 2) throw TrainingError("k-means: k must be >= 2, got " + std::to_string(options.k));
    if (rows.dim == 0 || rows.data.size() % rows.dim != 0)
        throw TrainingError("k-means: descriptor rows do not match dim");
    if (options.max_iters == 0) throw TrainingError("k-means: max_iters must be positive");
    for (float v : rows.data)
        if (!std::isfinite(v)) throw TrainingError("k-means: non-finite descriptor value");
    const std::size_t distinct = count_distinct_rows(rows, options.k);
    if (distinct < options.k)
        throw TrainingError("k-means: need at least " + std::to_string(options.k) + " distinct rows, got " +
                            std::to_string(distinct));

    const std::size_t n = rows.rows();
    std::mt19937_64 rng(options.seed);
    Centers centers = kmeans_pp_init(rows, options.k, rng);

    std::vector<std::uint32_t> labels(n), prev_labels;
    std::vector<double> cost(n);
    std::vector<double> sums;
    std::vector<std::size_t> counts;
    double prev_inertia = 0.0;
    if (inertia_trace) inertia_trace->clear();

    for (std::uint32_t iter = 0; iter < options.max_iters; ++iter) {
        const double inertia = assign_pass(rows, centers, labels, cost, &sums, &counts);
        if (inertia_trace) inertia_trace->push_back(inertia);
        if (iter > 0) {
            const bool stable = labels == prev_labels;
            const bool small_change = prev_inertia <= 0.0 || (prev_inertia - inertia) <= options.tol * prev_inertia;
            if (stable || small_change) break;
        }
        prev_inertia = inertia;
        prev_labels = labels;

        for (std::uint32_t c = 0; c < options.k; ++c) {
            if (counts[c] == 0) continue;
            auto row = centers.row(c);
            const double* s = sums.data() + std::size_t{c} * rows.dim;
            for (std::uint32_t j = 0; j < rows.dim; ++j) row[j] = s[j] / static_cast<double>(counts[c]);
        }
        // Empty clusters take the worst-served points, one each.
        for (std::uint32_t c = 0; c < options.k; ++c) {
            if (counts[c] != 0) continue;
            const auto worst = static_cast<std::size_t>(std::max_element(cost.begin(), cost.end()) - cost.begin());
            auto src = rows.row(worst);
            std::copy(src.begin(), src.end(), centers.row(c).begin());
            cost[worst] = 0.0;
        }
    }

    Vocabulary vocab;
    vocab.k = options.k;
    vocab.dim = rows.dim;
    vocab.seed = options.seed;
    vocab.centroids.resize(centers.values.size());
    std::transform(centers.values.begin(), centers.values.end(), vocab.centroids.begin(),
                   [](double v) { return static_cast<float>(v); });
    Centers rounded{vocab.k, vocab.dim, std::vector<double>(vocab.centroids.begin(), vocab.centroids.end())};
    vocab.inertia = assign_pass(rows, rounded, labels, cost, nullptr, nullptr);
    try {
        vocab.validate();
    } catch (const ShapeError& e) {
        throw TrainingError(std::string("k-means: ") + e.what());
    }
    return vocab;
}

std::vector<float> sample_descriptor_rows(std::span<const DenseFeatureMap> maps, std::size_t max_rows,
                                          std::uint64_t seed) {
    std::size_t total = 0;
    std::uint32_t dim = 0;
    for (const auto& m : maps) {
        if (dim == 0) dim = m.dim;
        if (m.dim != dim) throw ShapeError("sample_descriptor_rows: maps have different dims");
        total += m.cell_count();
    }
    std::vector<std::size_t> order(total);
    std::iota(order.begin(), order.end(), 0);
    if (max_rows != 0 && max_rows < total) {
        std::mt19937_64 rng(seed);
        // Partial Fisher-Yates, then restore traversal order.
        for (std::size_t i = 0; i < max_rows; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, total - 1);
            std::swap(order[i], order[pick(rng)]);
        }
        order.resize(max_rows);
        std::sort(order.begin(), order.end());
    }
    std::vector<float> out;
    out.reserve(order.size() * dim);
    std::size_t map_index = 0, map_start = 0;
    for (std::size_t flat : order) {
        while (flat >= map_start + maps[map_index].cell_count()) {
            map_start += maps[map_index].cell_count();
            ++map_index;
        }
        auto cell = maps[map_index].cell(flat - map_start);
        out.insert(out.end(), cell.begin(), cell.end());
    }
    return out;
}

ClusterAssignmentGrid assign_hard(const Vocabulary& vocab, const DenseFeatureMap& map) {
    if (map.dim != vocab.dim)
        throw ShapeError("assign_hard: map dim " + std::to_string(map.dim) + " != vocabulary dim " +
                         std::to_string(vocab.dim));
    ClusterAssignmentGrid grid{map.grid_h, map.grid_w, std::vector<std::uint32_t>(map.cell_count())};
    for (std::size_t i = 0; i < map.cell_count(); ++i) grid.labels[i] = vocab.nearest(map.cell(i));
    return grid;
}

std::vector<std::uint8_t> encode_vocabulary(const Vocabulary& vocab) {
    vocab.validate();
    detail::ByteWriter w;
    w.magic(kVocabMagic);
    w.u8(kVocabVersion);
    w.u32(vocab.k);
    w.u32(vocab.dim);
    w.u64(vocab.seed);
    w.f32s(vocab.centroids);
    w.f64(vocab.inertia);
    return w.take();
}

Vocabulary decode_vocabulary(std::span<const std::uint8_t> bytes) {
    detail::ByteReader r(bytes, "vocabulary file");
    r.expect_magic(kVocabMagic);
    r.expect_version(kVocabVersion);
    Vocabulary v;
    v.k = r.u32();
    v.dim = r.u32();
    v.seed = r.u64();
    r.need_elements(std::uint64_t{v.k} * v.dim, sizeof(float));
    v.centroids.resize(std::size_t{v.k} * v.dim);
    r.f32s(v.centroids);
    v.inertia = r.f64();
    r.expect_end();
    try {
        v.validate();
    } catch (const ShapeError& e) {
        throw FormatError(std::string("vocabulary file: ") + e.what());
    }
    return v;
}

void write_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
    write_file_bytes(path, encode_vocabulary(vocab));
}

Vocabulary read_vocabulary(const std::filesystem::path& path) {
    auto bytes = read_file_bytes(path);
    try {
        return decode_vocabulary(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

}  // namespace vpr
