#include "vpr/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>
#include <json.hpp>

#include "vpr/error.hpp"

namespace vpr {
namespace {

double squared_distance(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
    }
    return acc;
}

// Maps points to zero mean and mean distance sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const PixelPair> pairs, bool query_side) {
    double mx = 0.0, my = 0.0;
    for (const auto& p : pairs) {
        mx += query_side ? p.qx : p.cx;
        my += query_side ? p.qy : p.cy;
    }
    mx /= static_cast<double>(pairs.size());
    my /= static_cast<double>(pairs.size());
    double mean_dist = 0.0;
    for (const auto& p : pairs) {
        const double dx = (query_side ? p.qx : p.cx) - mx;
        const double dy = (query_side ? p.qy : p.cy) - my;
        mean_dist += std::hypot(dx, dy);
    }
    mean_dist /= static_cast<double>(pairs.size());
    const double s = mean_dist > 0.0 ? std::sqrt(2.0) / mean_dist : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * mx, 0, s, -s * my, 0, 0, 1;
    return t;
}

double triangle_area2(double ax, double ay, double bx, double by, double cx, double cy) {
    return std::abs((bx - ax) * (cy - ay) - (by - ay) * (cx - ax));
}

std::size_t count_inliers(const Homography& h, std::span<const PixelPair> pairs, double threshold,
                          std::vector<bool>* flags) {
    std::size_t count = 0;
    if (flags) flags->assign(pairs.size(), false);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        if (h.transfer_error(pairs[i]) < threshold) {
            ++count;
            if (flags) (*flags)[i] = true;
        }
    }
    return count;
}

std::uint32_t required_iterations(double inlier_ratio, double confidence, std::uint32_t cap) {
    if (inlier_ratio >= 1.0) return 1;
    const double p_good = std::pow(inlier_ratio, 4);
    if (p_good <= 0.0) return cap;
    const double denom = std::log(1.0 - p_good);
    if (denom >= 0.0) return cap;
    const double n = std::ceil(std::log(1.0 - confidence) / denom);
    return n >= static_cast<double>(cap) ? cap : static_cast<std::uint32_t>(std::max(1.0, n));
}

// Exact fit through four pairs with h33 fixed to 1; cheaper than the SVD path
// and used only inside the RANSAC loop.
std::optional<Homography> minimal_homography(std::span<const PixelPair, 4> s) {
    const Eigen::Matrix3d tq = normalizing_transform(s, true);
    const Eigen::Matrix3d tc = normalizing_transform(s, false);
    Eigen::Matrix<double, 8, 8> a;
    Eigen::Matrix<double, 8, 1> b;
    for (int i = 0; i < 4; ++i) {
        const auto& p = s[static_cast<std::size_t>(i)];
        const double x = tq(0, 0) * p.qx + tq(0, 2), y = tq(1, 1) * p.qy + tq(1, 2);
        const double u = tc(0, 0) * p.cx + tc(0, 2), v = tc(1, 1) * p.cy + tc(1, 2);
        a.row(2 * i) << x, y, 1, 0, 0, 0, -u * x, -u * y;
        a.row(2 * i + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
        b(2 * i) = u;
        b(2 * i + 1) = v;
    }
    const Eigen::PartialPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
    if (!(std::abs(lu.determinant()) > 1e-12)) return std::nullopt;
    const Eigen::Matrix<double, 8, 1> hv = lu.solve(b);
    Eigen::Matrix3d hn;
    hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), 1.0;
    Eigen::Matrix3d hm = tc.inverse() * hn * tq;
    if (!hm.allFinite() || std::abs(hm(2, 2)) < 1e-12) return std::nullopt;
    hm /= hm(2, 2);
    if (!hm.allFinite() || std::abs(hm.determinant()) < 1e-12) return std::nullopt;
    Homography out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.h[static_cast<std::size_t>(3 * r + c)] = hm(r, c);
    return out;
}

}  // namespace

std::vector<Correspondence> mutual_nn(const DescriptorRows& query, const DescriptorRows& candidate) {
    const std::size_t nq = query.rows(), nc = candidate.rows();
    if (nq == 0 || nc == 0) return {};
    if (query.dim != candidate.dim)
        throw ShapeError("mutual_nn: descriptor dims differ (" + std::to_string(query.dim) + " vs " +
                         std::to_string(candidate.dim) + ")");

    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<std::uint32_t> q_best(nq, 0), c_best(nc, 0);
    std::vector<double> q_dist(nq, inf), c_dist(nc, inf);
    for (std::size_t i = 0; i < nq; ++i) {
        auto qi = query.row(i);
        for (std::size_t j = 0; j < nc; ++j) {
            const double d = squared_distance(qi, candidate.row(j));
            if (d < q_dist[i]) {
                q_dist[i] = d;
                q_best[i] = static_cast<std::uint32_t>(j);
            }
            if (d < c_dist[j]) {
                c_dist[j] = d;
                c_best[j] = static_cast<std::uint32_t>(i);
            }
        }
    }
    std::vector<Correspondence> out;
    for (std::uint32_t i = 0; i < nq; ++i) {
        const std::uint32_t j = q_best[i];
        if (c_best[j] == i) out.push_back({i, j, std::sqrt(q_dist[i])});
    }
    return out;
}

double Homography::transfer_error(const PixelPair& p) const {
    const double w = h[6] * p.qx + h[7] * p.qy + h[8];
    if (std::abs(w) < 1e-12) return std::numeric_limits<double>::infinity();
    const double x = (h[0] * p.qx + h[1] * p.qy + h[2]) / w;
    const double y = (h[3] * p.qx + h[4] * p.qy + h[5]) / w;
    const double e = std::hypot(x - p.cx, y - p.cy);
    return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

bool degenerate_sample(std::span<const PixelPair, 4> s) {
    constexpr double kMinArea2 = 1e-6;
    static constexpr int tri[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    for (const auto& t : tri) {
        const auto &a = s[t[0]], &b = s[t[1]], &c = s[t[2]];
        if (triangle_area2(a.qx, a.qy, b.qx, b.qy, c.qx, c.qy) < kMinArea2) return true;
        if (triangle_area2(a.cx, a.cy, b.cx, b.cy, c.cx, c.cy) < kMinArea2) return true;
    }
    return false;
}

std::optional<Homography> estimate_homography(std::span<const PixelPair> pairs) {
    if (pairs.size() < 4) return std::nullopt;
    const Eigen::Matrix3d tq = normalizing_transform(pairs, true);
    const Eigen::Matrix3d tc = normalizing_transform(pairs, false);

    Eigen::MatrixXd a(2 * pairs.size(), 9);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Eigen::Vector3d q = tq * Eigen::Vector3d(pairs[i].qx, pairs[i].qy, 1.0);
        const Eigen::Vector3d c = tc * Eigen::Vector3d(pairs[i].cx, pairs[i].cy, 1.0);
        const double x = q.x() / q.z(), y = q.y() / q.z();
        const double u = c.x() / c.z(), v = c.y() / c.z();
        a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
        a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd hv = svd.matrixV().col(8);
    Eigen::Matrix3d hn;
    hn << hv(0), hv(1), hv(2), hv(3), hv(4), hv(5), hv(6), hv(7), hv(8);
    Eigen::Matrix3d hm = tc.inverse() * hn * tq;
    if (!hm.allFinite()) return std::nullopt;
    if (std::abs(hm(2, 2)) > 1e-12)
        hm /= hm(2, 2);
    else
        hm /= hm.norm();
    if (!hm.allFinite() || std::abs(hm.determinant()) < 1e-12) return std::nullopt;

    Homography out;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) out.h[static_cast<std::size_t>(3 * r + c)] = hm(r, c);
    return out;
}

RansacResult ransac_homography(std::span<const PixelPair> pairs, const RansacOptions& options) {
    if (!(options.threshold_px > 0.0)) throw ParameterError("ransac: threshold must be positive");
    if (!(options.confidence > 0.0 && options.confidence < 1.0))
        throw ParameterError("ransac: confidence must lie in (0, 1)");
    RansacResult result;
    result.inliers.assign(pairs.size(), false);
    const std::size_t n = pairs.size();
    if (n < 4 || options.max_iters == 0) return result;

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    std::optional<Homography> best;
    std::size_t best_count = 0;
    std::uint32_t needed = options.max_iters;

    std::uint32_t iter = 0;
    for (; iter < options.max_iters && iter < needed; ++iter) {
        std::array<std::size_t, 4> idx{};
        for (std::size_t s = 0; s < 4; ++s) {
            std::size_t candidate;
            do {
                candidate = pick(rng);
            } while (std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(s), candidate) !=
                     idx.begin() + static_cast<std::ptrdiff_t>(s));
            idx[s] = candidate;
        }
        std::array<PixelPair, 4> sample{pairs[idx[0]], pairs[idx[1]], pairs[idx[2]], pairs[idx[3]]};
        if (degenerate_sample(std::span<const PixelPair, 4>(sample))) continue;
        const auto model = minimal_homography(std::span<const PixelPair, 4>(sample));
        if (!model) continue;
        const std::size_t count = count_inliers(*model, pairs, options.threshold_px, nullptr);
        if (count > best_count) {
            best_count = count;
            best = model;
            needed = required_iterations(static_cast<double>(count) / static_cast<double>(n), options.confidence,
                                         options.max_iters);
        }
    }
    result.iterations = iter;
    if (!best) return result;

    std::vector<bool> flags;
    count_inliers(*best, pairs, options.threshold_px, &flags);
    std::vector<PixelPair> inlier_pairs;
    for (std::size_t i = 0; i < n; ++i)
        if (flags[i]) inlier_pairs.push_back(pairs[i]);
    if (const auto refit = estimate_homography(inlier_pairs)) {
        std::vector<bool> refit_flags;
        const std::size_t refit_count = count_inliers(*refit, pairs, options.threshold_px, &refit_flags);
        if (refit_count >= best_count) {
            best = refit;
            best_count = refit_count;
            flags = std::move(refit_flags);
        }
    }
    result.homography = best;
    result.inliers = std::move(flags);
    result.inlier_count = best_count;
    return result;
}

double match_score(std::size_t inliers, std::size_t query_count, std::size_t candidate_count) {
    const std::size_t denom = query_count + candidate_count;
    if (denom == 0) return 0.0;
    return static_cast<double>(inliers) / static_cast<double>(denom);
}

MatchResult verify_correspondences(const KeypointSet& query, const KeypointSet& candidate,
                                   std::vector<Correspondence> correspondences, const RansacOptions& options) {
    MatchResult out;
    out.query_id = query.image_id;
    out.candidate_id = candidate.image_id;
    out.query_count = query.size();
    out.candidate_count = candidate.size();
    std::vector<PixelPair> pairs;
    pairs.reserve(correspondences.size());
    for (const auto& c : correspondences) {
        if (c.query_idx >= query.size() || c.cand_idx >= candidate.size())
            throw ShapeError("correspondence index out of range");
        const auto& q = query.points[c.query_idx];
        const auto& p = candidate.points[c.cand_idx];
        pairs.push_back({q.u, q.v, p.u, p.v});
    }
    const auto ransac = ransac_homography(pairs, options);
    out.correspondences = std::move(correspondences);
    out.inliers = ransac.inlier_count;
    out.homography = ransac.homography;
    out.score = match_score(out.inliers, out.query_count, out.candidate_count);
    return out;
}

MatchResult match_pair(const KeypointSet& query, const KeypointSet& candidate, const RansacOptions& options) {
    auto pairs = mutual_nn({query.descriptors, query.d_local}, {candidate.descriptors, candidate.d_local});
    return verify_correspondences(query, candidate, std::move(pairs), options);
}

std::vector<Correspondence> parse_correspondences_json(const std::string& text) {
    using json = nlohmann::json;
    try {
        const json doc = json::parse(text);
        if (!doc.is_array()) throw SchemaError("correspondences: expected a JSON array");
        std::vector<Correspondence> out;
        out.reserve(doc.size());
        for (const auto& item : doc)
            out.push_back({item.at("query_idx").get<std::uint32_t>(), item.at("cand_idx").get<std::uint32_t>(), 0.0});
        return out;
    } catch (const json::exception& e) {
        throw SchemaError(std::string("correspondences: ") + e.what());
    }
}

}  // namespace vpr
