#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "pointdisc/geom.hpp"
#include "pointdisc/rng.hpp"

namespace pointdisc {

struct Mesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<std::uint32_t, 3>> faces;
    std::size_t degenerate_dropped = 0;  // triangles filtered at parse time (area <= 1e-12)
};

struct Dataset {
    std::vector<PointCloud> clouds;
    std::vector<std::string> class_names;
    std::string split = "train";
    std::uint64_t seed = 0;
};

enum class ShapeClass : std::uint32_t { sphere = 0, cube = 1, cylinder = 2, torus = 3 };

inline const std::vector<std::string>& shape_class_names() {
    static const std::vector<std::string> names{"sphere", "cube", "cylinder", "torus"};
    return names;
}

// Uniform surface samples of the canonical shape, before any augmentation:
// unit sphere; cube with edge 1; capped cylinder r=0.5 h=1.6; torus R=0.7 r=0.25.
std::vector<Vec3> sample_class_surface(ShapeClass cls, std::size_t n, Rng& rng);

// Canonical surface + random rotation, scale jitter U[0.8,1.2], coordinate
// jitter N(0, 0.01^2), then normalize_cloud.
PointCloud gen_synthetic(ShapeClass cls, std::size_t n_points, std::uint64_t seed);

// n_per_class clouds per class, seeded per cloud from (seed, class, index).
Dataset gen_synthetic_dataset(std::size_t n_per_class, std::size_t n_points, std::uint64_t seed,
                              const std::string& split);

Mesh parse_off(std::string_view text);
std::string serialize_off(const Mesh& mesh);

double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c);

// Area-weighted triangle choice, uniform barycentric point with reflection.
PointCloud sample_mesh_surface(const Mesh& mesh, std::size_t n, std::uint64_t seed);

// .pdsc container (little-endian): magic "PDSC", version u32, cloud count u32,
// points-per-cloud u32, class table, split tag, seed, then per cloud
// label u32 + n x 3 float32.
void dataset_write(const Dataset& ds, const std::filesystem::path& path);
Dataset dataset_read(const std::filesystem::path& path);

// Reads dir/<class_name>/*.off, samples n_points per mesh.
Dataset convert_off_directory(const std::filesystem::path& dir, std::size_t n_points,
                              std::uint64_t seed, const std::string& split);

}  // namespace pointdisc
