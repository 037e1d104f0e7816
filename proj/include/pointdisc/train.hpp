#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pointdisc/data.hpp"
#include "pointdisc/loss.hpp"

namespace pointdisc {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

struct TrainConfig {
    std::size_t batch_size = 8;   // reference runs use 24
    std::size_t epochs = 100;
    double lr = 0.001;            // self-supervised pretraining rate
    double lr_finetune = 0.0005;  // fine-tuning companion rate, kept for reference
    double decay_factor = 0.7;
    std::size_t decay_every = 10;
    double lr_floor = 1e-5;
    AdamHyper adam;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 25;
    LossConfig loss;

    void validate() const;
};

// First/second moments aligned with the model's parameter visit order.
struct OptimState {
    std::vector<std::string> names;
    std::vector<Tensor> m, v;
    std::uint64_t step = 0;

    static OptimState for_model(Model& model);
};

// Bias-corrected Adam over every parameter; gradients must already be
// accumulated. weight_decay is plain L2 coupling (0 by default).
void adam_step(Model& model, OptimState& state, double lr, const AdamHyper& hyper);

double lr_at(std::size_t epoch, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// .pdck checkpoints: magic "PDCK", version u32, config blob, epoch u64,
// rng state 4 x u64, adam step u64, then a named tensor table
// (u32 name len + name, u32 ndim, u64 dims, f64 data), little-endian.
// Parameters, BN running statistics and Adam moments all live in the table.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    std::string config_text;
    std::uint64_t epoch = 0;
    std::array<std::uint64_t, 4> rng_state{};
};

void checkpoint_save(const std::filesystem::path& path, Model& model, const OptimState* optim,
                     const CheckpointMeta& meta);
// optim == nullptr skips Adam moments (weights-only load for evaluation).
CheckpointMeta checkpoint_load(const std::filesystem::path& path, Model& model,
                               OptimState* optim);

struct EpochMetric {
    std::size_t epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
    double wall_seconds = 0.0;
};

struct PretrainResult {
    std::vector<EpochMetric> metrics;
};

// Seeded pretraining: shuffle, normalize, encode/adapt, sample groups, score,
// step. Deterministic given (dataset, config, seed); metrics CSV rows are
// epoch,mean_loss,lr,wall_seconds (wall_seconds is the one non-reproducible
// column). Checkpoints are written every checkpoint_every epochs and at the
// end. start_epoch > 0 resumes a loaded model/optimizer pair.
PretrainResult pretrain(Model& model, OptimState& optim, const Dataset& dataset,
                        const TrainConfig& cfg, const std::string& config_echo,
                        const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& metrics_path, std::size_t start_epoch = 0);

}  // namespace pointdisc
