// Literal nested-loop transcription of the utility formulas, used as a test
// oracle. Deliberately avoids the production encode/utility code paths.

#include <cmath>

#include "vpr/error.hpp"
#include "vpr/synth.hpp"

namespace vpr::synth {
namespace {

double oracle_distance(const Position& a, const Position& b) {
    if (const auto* ga = std::get_if<GeoPosition>(&a)) {
        const auto& gb = std::get<GeoPosition>(b);
        const double r = 3.14159265358979323846 / 180.0;
        const double s1 = std::sin((gb.lat - ga->lat) * r / 2.0);
        const double s2 = std::sin((gb.lon - ga->lon) * r / 2.0);
        const double h = s1 * s1 + std::cos(ga->lat * r) * std::cos(gb.lat * r) * s2 * s2;
        return 2.0 * 6371000.0 * std::asin(std::sqrt(h));
    }
    return std::abs(static_cast<double>(std::get<std::int64_t>(a) - std::get<std::int64_t>(b)));
}

}  // namespace

OracleUtility oracle_utility(const std::vector<DenseFeatureMap>& maps, const Vocabulary& vocab,
                             const TraverseManifest& manifest, const GeoConfig& geo) {
    const std::size_t N = maps.size();
    const std::uint32_t K = vocab.k, D = vocab.dim;
    if (manifest.size() != N) throw ShapeError("oracle: manifest size mismatch");

    // V[a][k][d]: sum over cells assigned to k of (cell - centroid_k).
    std::vector<std::vector<std::vector<double>>> V(N, std::vector<std::vector<double>>(K, std::vector<double>(D, 0.0)));
    std::vector<std::vector<int>> present(N, std::vector<int>(K, 0));
    for (std::size_t a = 0; a < N; ++a) {
        const auto& m = maps[a];
        for (std::size_t cell = 0; cell < std::size_t{m.grid_h} * m.grid_w; ++cell) {
            std::uint32_t best = 0;
            double best_d = -1.0;
            for (std::uint32_t k = 0; k < K; ++k) {
                double d = 0.0;
                for (std::uint32_t j = 0; j < D; ++j) {
                    const double diff = double(m.data[cell * D + j]) - double(vocab.centroids[k * D + j]);
                    d += diff * diff;
                }
                if (best_d < 0.0 || d < best_d) {
                    best_d = d;
                    best = k;
                }
            }
            for (std::uint32_t j = 0; j < D; ++j)
                V[a][best][j] += double(m.data[cell * D + j]) - double(vocab.centroids[best * D + j]);
            present[a][best] = 1;
        }
    }

    auto dist = [&](std::size_t a, std::size_t n, std::uint32_t k) {
        double s = 0.0;
        for (std::uint32_t j = 0; j < D; ++j) {
            // Round through float like the stored residuals.
            const double x = double(float(V[a][k][j])) - double(float(V[n][k][j]));
            s += x * x;
        }
        return std::sqrt(s);
    };

    OracleUtility out;
    out.es.assign(K, 0.0);
    for (std::uint32_t k = 0; k < K; ++k) {
        double total = 0.0;
        for (std::size_t a = 0; a < N; ++a)
            for (std::size_t n = 0; n < N; ++n)
                if (n != a) total += dist(a, n, k);
        out.es[k] = total / (double(N) * double(N - 1));
    }

    out.ps.assign(N, std::vector<std::optional<double>>(K));
    for (std::size_t a = 0; a < N; ++a) {
        std::vector<std::size_t> negs;
        for (std::size_t n = 0; n < N; ++n)
            if (n != a && oracle_distance(manifest.entries[a].position, manifest.entries[n].position) > geo.negative_radius)
                negs.push_back(n);
        if (negs.empty()) continue;
        for (std::uint32_t k = 0; k < K; ++k) {
            if (!present[a][k]) continue;
            double total = 0.0;
            for (std::size_t n : negs) total += dist(a, n, k);
            out.ps[a][k] = total / double(negs.size());
        }
    }
    return out;
}

}  // namespace vpr::synth
