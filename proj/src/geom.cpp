#include "pointdisc/geom.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pointdisc/error.hpp"

namespace pointdisc {

namespace {

bool coord_less(const Vec3& a, const Vec3& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
}

void require_finite(const PointCloud& cloud, const char* who) {
    for (const auto& p : cloud.points)
        if (!p.allFinite())
            throw InvalidInputError(std::string(who) + ": non-finite coordinate in cloud '" +
                                    cloud.id + "'");
}

}  // namespace

PointCloud normalize_cloud(const PointCloud& cloud) {
    if (cloud.points.empty()) throw InvalidInputError("normalize_cloud: empty cloud");
    require_finite(cloud, "normalize_cloud");

    Vec3 lo = cloud.points.front(), hi = cloud.points.front();
    for (const auto& p : cloud.points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vec3 center = 0.5 * (lo + hi);
    const double half_extent = 0.5 * (hi - lo).maxCoeff();

    PointCloud out = cloud;
    const double scale = half_extent > 0.0 ? 1.0 / half_extent : 1.0;
    for (auto& p : out.points) p = (p - center) * scale;
    return out;
}

std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m) {
    const std::size_t n = points.size();
    if (m < 1 || m > n)
        throw InvalidInputError("farthest_point_sample: m = " + std::to_string(m) +
                                " out of range for N = " + std::to_string(n));

    Vec3 centroid = Vec3::Zero();
    for (const auto& p : points) centroid += p;
    centroid /= static_cast<double>(n);

    // pick(i beats j) iff dist_i > dist_j, or equal dist and coord/index less.
    auto better = [&](double di, std::size_t i, double dj, std::size_t j) {
        if (di != dj) return di > dj;
        if (points[i] != points[j]) return coord_less(points[i], points[j]);
        return i < j;
    };

    std::size_t seed = 0;
    double seed_d = (points[0] - centroid).squaredNorm();
    for (std::size_t i = 1; i < n; ++i) {
        const double d = (points[i] - centroid).squaredNorm();
        if (better(d, i, seed_d, seed)) {
            seed_d = d;
            seed = i;
        }
    }

    std::vector<std::size_t> picked{seed};
    std::vector<double> min_d(n);
    for (std::size_t i = 0; i < n; ++i) min_d[i] = (points[i] - points[seed]).squaredNorm();

    while (picked.size() < m) {
        std::size_t best = picked.front();
        double best_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (min_d[i] == 0.0) continue;  // already picked or duplicate of a pick
            if (best_d < 0.0 || better(min_d[i], i, best_d, best)) {
                best_d = min_d[i];
                best = i;
            }
        }
        if (best_d < 0.0) {
            // only duplicates remain; fill with unused indices in order
            for (std::size_t i = 0; i < n && picked.size() < m; ++i)
                if (std::find(picked.begin(), picked.end(), i) == picked.end())
                    picked.push_back(i);
            break;
        }
        picked.push_back(best);
        for (std::size_t i = 0; i < n; ++i)
            min_d[i] = std::min(min_d[i], (points[i] - points[best]).squaredNorm());
    }
    return picked;
}

std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m) {
    return farthest_point_sample(std::span<const Vec3>(cloud.points), m);
}

std::vector<std::size_t> radius_members(std::span<const Vec3> points, const Vec3& center,
                                        double radius) {
    std::vector<std::size_t> out;
    out.reserve(std::min<std::size_t>(points.size(), 64));
    const double r2 = radius * radius;
    for (std::size_t i = 0; i < points.size(); ++i)
        if ((points[i] - center).squaredNorm() <= r2) out.push_back(i);
    return out;
}

std::vector<std::size_t> radius_members(const PointCloud& cloud, const Vec3& center,
                                        double radius) {
    return radius_members(std::span<const Vec3>(cloud.points), center, radius);
}

namespace {

std::size_t nearest_index(std::span<const Vec3> points, const Vec3& center) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points.size(); ++i) {
        const double d = (points[i] - center).squaredNorm();
        if (d < best_d || (d == best_d && coord_less(points[i], points[best]))) {
            best_d = d;
            best = i;
        }
    }
    return best;
}

}  // namespace

std::vector<std::size_t> ball_query(const PointCloud& cloud, const Vec3& center, double radius,
                                    std::size_t max_n) {
    if (radius <= 0.0) throw InvalidInputError("ball_query: radius must be > 0");
    if (max_n < 1) throw InvalidInputError("ball_query: max_n must be >= 1");
    if (cloud.points.empty()) throw InvalidInputError("ball_query: empty cloud");

    std::vector<std::size_t> out = radius_members(cloud, center, radius);
    if (out.size() > max_n) out.resize(max_n);
    if (out.empty()) out.push_back(nearest_index(std::span<const Vec3>(cloud.points), center));
    while (out.size() < max_n) out.push_back(out.front());
    return out;
}

std::vector<std::size_t> nearest_in_ball(std::span<const Vec3> points, const Vec3& center,
                                         double radius, std::size_t max_n) {
    if (radius <= 0.0) throw InvalidInputError("nearest_in_ball: radius must be > 0");
    if (max_n < 1) throw InvalidInputError("nearest_in_ball: max_n must be >= 1");
    if (points.empty()) throw InvalidInputError("nearest_in_ball: empty cloud");

    std::vector<std::size_t> in_ball = radius_members(points, center, radius);
    std::sort(in_ball.begin(), in_ball.end(), [&](std::size_t i, std::size_t j) {
        const double di = (points[i] - center).squaredNorm();
        const double dj = (points[j] - center).squaredNorm();
        if (di != dj) return di < dj;
        if (points[i] != points[j]) return coord_less(points[i], points[j]);
        return i < j;
    });
    if (in_ball.size() > max_n) in_ball.resize(max_n);
    if (in_ball.empty()) in_ball.push_back(nearest_index(points, center));
    while (in_ball.size() < max_n) in_ball.push_back(in_ball.front());
    return in_ball;
}

std::vector<std::size_t> nearest_in_ball(const PointCloud& cloud, const Vec3& center,
                                         double radius, std::size_t max_n) {
    return nearest_in_ball(std::span<const Vec3>(cloud.points), center, radius, max_n);
}

std::vector<Vec3> sample_positives(const PointCloud& cloud, const Region& region, std::size_t k,
                                   Rng& rng, bool with_replacement) {
    if (region.member_indices.empty())
        throw InvalidInputError("sample_positives: empty region");
    if (k < 1) throw InvalidInputError("sample_positives: K must be >= 1");
    std::vector<Vec3> out;
    out.reserve(k);
    if (with_replacement) {
        for (std::size_t i = 0; i < k; ++i)
            out.push_back(
                cloud.points[region.member_indices[rng.index(region.member_indices.size())]]);
        return out;
    }
    if (k > region.member_indices.size())
        throw InvalidInputError("sample_positives: K exceeds region size without replacement");
    std::vector<std::size_t> pool = region.member_indices;  // partial Fisher-Yates
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + rng.index(pool.size() - i);
        std::swap(pool[i], pool[j]);
        out.push_back(cloud.points[pool[i]]);
    }
    return out;
}

NegativeSample sample_negatives(const std::vector<Vec3>& positives_pool, const NoiseSpec& spec,
                                std::size_t t, const PointCloud& cloud, const Region& region,
                                Rng& rng) {
    if (positives_pool.empty()) throw InvalidInputError("sample_negatives: empty pool");
    if (t < 1) throw InvalidInputError("sample_negatives: T must be >= 1");
    if (spec.kind == NoiseSpec::Kind::uniform && spec.a < 0.0)
        throw InvalidInputError("sample_negatives: uniform half-width must be >= 0");
    if (spec.kind == NoiseSpec::Kind::gaussian && spec.sigma <= 0.0)
        throw InvalidInputError("sample_negatives: gaussian sigma must be > 0");

    const double excl2 = spec.exclusion_radius * spec.exclusion_radius;
    auto too_close = [&](const Vec3& q) {
        for (std::size_t idx : region.member_indices)
            if ((cloud.points[idx] - q).squaredNorm() < excl2) return true;
        return false;
    };

    NegativeSample res;
    res.points.reserve(t);
    for (std::size_t i = 0; i < t; ++i) {
        Vec3 candidate = Vec3::Zero();
        bool accepted = false;
        for (int attempt = 0; attempt < 100; ++attempt) {
            const Vec3& base = positives_pool[rng.index(positives_pool.size())];
            Vec3 noise;
            if (spec.kind == NoiseSpec::Kind::uniform) {
                noise = Vec3(rng.uniform(-spec.a, spec.a), rng.uniform(-spec.a, spec.a),
                             rng.uniform(-spec.a, spec.a));
            } else {
                noise = Vec3(rng.normal(0.0, spec.sigma), rng.normal(0.0, spec.sigma),
                             rng.normal(0.0, spec.sigma));
            }
            candidate = base + noise;
            if (spec.exclusion_radius <= 0.0 || !too_close(candidate)) {
                accepted = true;
                break;
            }
        }
        if (!accepted) ++res.fallback_tally;
        res.points.push_back(candidate);
    }
    return res;
}

}  // namespace pointdisc
