#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pointdisc/consistency.hpp"
#include "pointdisc/encoder.hpp"
#include "pointdisc/geom.hpp"

namespace pointdisc {

// One (z_j, positives, negatives) tuple. cloud_index/row identify the adapted
// feature row so the training path can recompute z and route gradients; the z
// snapshot makes the group usable standalone.
struct DiscriminationGroup {
    LayerId layer = LayerId::l1;
    std::size_t cloud_index = 0;
    std::size_t row = 0;  // row inside the cloud's adapted features at `layer`
    Vec z;                // unit D-vector snapshot
    Region region;        // members indexed into the input cloud
    std::vector<Vec3> positives;
    std::vector<Vec3> negatives;
    std::size_t negative_fallbacks = 0;
};

enum class LossReduction { mean, sum };
enum class LayerChoice { uniform, round_robin };

struct LossConfig {
    double tau = 0.1;
    std::size_t k = 1;
    std::size_t t = 10;
    std::size_t groups_per_cloud = 64;  // reference runs use 1000
    std::array<bool, kLayerCount> layers{true, true, true, true};
    LossReduction reduction = LossReduction::mean;
    NoiseSpec noise;
    bool positives_with_replacement = true;
    // uniform layer draw per group, or a deterministic per-layer quota
    LayerChoice layer_choice = LayerChoice::uniform;
    // with replacement (default) or cycling through shuffled row permutations
    bool z_with_replacement = true;

    void validate() const;
    std::vector<LayerId> active_layers() const;
};

// Samples groups for one cloud; `adapted` are that cloud's per-layer unit-norm
// features and `enc` the matching per-cloud layer outputs (for centroids and
// receptive radii).
std::vector<DiscriminationGroup> build_groups(const PointCloud& cloud,
                                              const std::array<LayerFeatures, kLayerCount>& enc,
                                              const std::array<RowMat, kLayerCount>& adapted,
                                              std::size_t cloud_index, const LossConfig& cfg,
                                              Rng& rng);

// Eq-style per-group loss: mean over positives of the cross entropy of the
// (1+T) logit vector [s+_i/tau, s-_1/tau, ..., s-_T/tau] with target 0.
double point_loss(const Vec& scores_pos, const Vec& scores_neg, double tau);

// Same, also producing d(loss)/d(score).
double point_loss_grad(const Vec& scores_pos, const Vec& scores_neg, double tau, Vec& dpos,
                       Vec& dneg);

// Full model bundle the loss trains.
struct Model {
    Encoder encoder;
    Consistency consistency;

    Model(const EncoderSpec& spec, NormKind nk, ConditionerKind ck, bool shared_cons,
          std::uint64_t init_seed);

    void visit_params(const std::function<void(const std::string&, Param&)>& f);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f);
    void zero_grad();
};

struct BatchLossResult {
    double loss = 0.0;
    std::size_t group_count = 0;
    std::size_t fallback_tally = 0;
};

// Forward + backward of the discrimination loss over fixed groups: encode,
// adapt, score all (z, p) pairs, reduce the per-group cross entropies, then
// push gradients into every parameter of consistency, adaptation and encoder.
// Running statistics are only updated when update_stats is set, so the loss
// is a pure function of (clouds, groups, parameters) with it off.
BatchLossResult batch_loss(Model& model, const std::vector<PointCloud>& clouds,
                           const std::vector<DiscriminationGroup>& groups, const LossConfig& cfg,
                           Mode mode, bool update_stats, bool compute_grad);

// Convenience for tests and the trainer: encode/adapt a batch, build groups
// per cloud with per-cloud RNG streams, then run batch_loss.
BatchLossResult batch_loss_with_groups(Model& model, const std::vector<PointCloud>& clouds,
                                       const LossConfig& cfg, std::uint64_t seed,
                                       std::uint64_t epoch, std::uint64_t batch_index, Mode mode,
                                       bool update_stats, bool compute_grad,
                                       std::vector<DiscriminationGroup>* groups_out = nullptr);

}  // namespace pointdisc
