#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pointdisc/data.hpp"
#include "pointdisc/loss.hpp"

namespace pointdisc {

// Frozen-feature vector of one cloud: eval-mode encode + adapt, channel-wise
// max over each layer's rows, layers concatenated (4 x D = 1024 by default).
Vec extract_features(Model& model, const PointCloud& cloud);

struct FeatureSet {
    RowMat x;                         // n x feature_dim
    std::vector<std::uint32_t> y;
};

FeatureSet extract_dataset_features(Model& model, const Dataset& ds);

// ---------------------------------------------------------------------------
// linear probe: L2-regularized multinomial logistic regression trained by
// full-batch gradient descent (lr = 1/L) to grad-norm <= 1e-6 or 5000 iters.
// ---------------------------------------------------------------------------

struct LogisticModel {
    RowMat w;  // classes x features
    Vec b;
    double final_loss = 0.0;
    double final_grad_norm = 0.0;
    std::size_t iterations = 0;
};

LogisticModel logistic_fit(const FeatureSet& train, std::size_t n_classes, double lambda,
                           std::size_t max_iters = 5000, double grad_tol = 1e-6,
                           std::uint64_t init_seed = 0, double init_scale = 0.0);

double logistic_accuracy(const LogisticModel& m, const FeatureSet& data);

struct LinearProbeResult {
    double test_accuracy = 0.0;
    double val_accuracy = 0.0;
    double lambda = 0.0;
};

// lambda grid {1e-4, 1e-3, 1e-2, 1e-1, 1, 10}, chosen on the validation set
// (ties keep the smaller lambda).
LinearProbeResult linear_probe(const FeatureSet& train, const FeatureSet& val,
                               const FeatureSet& test);

// ---------------------------------------------------------------------------
// distances
// ---------------------------------------------------------------------------

// mean over a in A of min over b in B of |a-b|.
double mean_nn_distance(std::span<const Vec3> set_a, std::span<const Vec3> set_b);
double chamfer_distance(std::span<const Vec3> set_a, std::span<const Vec3> set_b);

// ---------------------------------------------------------------------------
// local-shape probing via consistency scores
// ---------------------------------------------------------------------------

struct ProbeResult {
    Vec3 centroid = Vec3::Zero();
    LayerId layer = LayerId::l2;
    std::vector<Vec3> samples;       // n_samples uniform points in [-1,1]^3
    Vec scores;                      // per sample
    std::vector<Vec3> top_points;    // top_k by descending score
    std::vector<double> top_scores;
    std::vector<std::size_t> region_members;
    double top_k_distance = 0.0;     // mean NN distance of top_k to region members
    double control_distance = 0.0;   // same metric for a seeded uniform control set
};

ProbeResult shape_probe(Model& model, const PointCloud& cloud, LayerId layer,
                        std::size_t centroid_index, std::size_t n_samples, std::size_t top_k,
                        std::uint64_t seed);

// ASCII PLY: input cloud gray, region members green, top_k red; per-vertex
// float score property (0 outside the top_k set).
void export_probe_ply(const ProbeResult& result, const PointCloud& cloud,
                      const std::filesystem::path& path);

struct PlyVertex {
    double x = 0, y = 0, z = 0;
    int r = 0, g = 0, b = 0;
    double score = 0;
};

// Minimal reader for the exporter's own output (test closure).
std::vector<PlyVertex> read_probe_ply(const std::filesystem::path& path);

void append_probe_csv(const std::filesystem::path& path, std::size_t probe_id,
                      const ProbeResult& result, const std::string& header_comments = "");

}  // namespace pointdisc
