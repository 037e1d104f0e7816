#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "pointdisc/rng.hpp"
#include "pointdisc/tensor.hpp"

namespace pointdisc {

// One shape; coordinates are dimensionless and live in [-1,1]^3 once
// normalize_cloud has run.
struct PointCloud {
    std::vector<Vec3> points;
    std::optional<std::uint32_t> label;
    std::string id;

    std::size_t size() const { return points.size(); }
};

struct NoiseSpec {
    enum class Kind { uniform, gaussian };
    Kind kind = Kind::uniform;
    double a = 1.0;      // half-width for uniform noise
    double sigma = 1.0;  // stddev for gaussian noise
    double exclusion_radius = 0.0;  // 0 disables near-surface rejection
};

// A centroid's neighborhood in a source cloud.
struct Region {
    Vec3 center = Vec3::Zero();
    double radius = 0.0;
    std::vector<std::size_t> member_indices;
};

// Center the bounding box at the origin and scale by the max half-extent so
// max|coord| = 1. Zero-extent clouds are translated only.
PointCloud normalize_cloud(const PointCloud& cloud);

// Greedy min-distance maximization. The seed is the point farthest from the
// centroid; all ties break on lexicographically smallest coordinate, then
// smallest index, making the result invariant to input permutation.
std::vector<std::size_t> farthest_point_sample(const PointCloud& cloud, std::size_t m);

// All indices with dist <= radius in ascending-index order, truncated to
// max_n; short results are padded by replicating the first member, and an
// empty ball falls back to the nearest point replicated.
std::vector<std::size_t> ball_query(const PointCloud& cloud, const Vec3& center, double radius,
                                    std::size_t max_n);

// All member indices within radius, no truncation and no fallback.
std::vector<std::size_t> radius_members(const PointCloud& cloud, const Vec3& center,
                                        double radius);

// At most max_n in-radius neighbors ordered by (distance, coordinates); short
// groups are padded with the nearest member, an empty ball falls back to the
// nearest point. Permutation-invariant up to exact duplicate points, which is
// what the encoder's grouping needs.
std::vector<std::size_t> nearest_in_ball(const PointCloud& cloud, const Vec3& center,
                                         double radius, std::size_t max_n);

// Span variants used by the encoder, which works on batched coordinate
// buffers rather than PointCloud values.
std::vector<std::size_t> farthest_point_sample(std::span<const Vec3> points, std::size_t m);
std::vector<std::size_t> radius_members(std::span<const Vec3> points, const Vec3& center,
                                        double radius);
std::vector<std::size_t> nearest_in_ball(std::span<const Vec3> points, const Vec3& center,
                                         double radius, std::size_t max_n);

// Uniform draws from the region members; without replacement requires
// k <= member count.
std::vector<Vec3> sample_positives(const PointCloud& cloud, const Region& region, std::size_t k,
                                   Rng& rng, bool with_replacement = true);

struct NegativeSample {
    std::vector<Vec3> points;
    std::size_t fallback_tally = 0;  // draws that exhausted the rejection budget
};

// Negatives = (pool point drawn with replacement) + per-coordinate noise.
// With exclusion_radius > 0, draws landing within that distance of any region
// member are rejected and resampled, up to 100 attempts per negative.
NegativeSample sample_negatives(const std::vector<Vec3>& positives_pool, const NoiseSpec& spec,
                                std::size_t t, const PointCloud& cloud, const Region& region,
                                Rng& rng);

}  // namespace pointdisc
