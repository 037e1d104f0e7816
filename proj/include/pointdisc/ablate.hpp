#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pointdisc/config.hpp"
#include "pointdisc/data.hpp"

namespace pointdisc {

enum class AblationAxis { noise_kind, t_sweep, layer_set, cbn_vs_bn, exclusion };

AblationAxis parse_ablation_axis(const std::string& name);

struct AblationPlan {
    AblationAxis axis = AblationAxis::t_sweep;
    std::vector<std::string> values;
    Config base;
    std::size_t repeats = 3;

    // reads ablate.axis / ablate.values / ablate.repeats; empty values fall
    // back to the axis defaults (T_sweep 1,5,10; layer_set's four rows; ...)
    static AblationPlan from_config(const Config& base);
    void validate() const;

    // the overlay one axis value induces, e.g. "l1:l2:l3+bn" ->
    // {loss.layers, consistency.norm}
    Config config_for(const std::string& value) const;
    std::vector<std::string> allowed_keys() const;
};

struct AblationRow {
    std::string axis_value;
    std::size_t repeat = 0;
    bool is_summary = false;
    double probe_accuracy = 0.0;   // summary: mean accuracy over repeats
    double mean_loss_final = 0.0;  // summary: mean final loss
    double accuracy_ste = 0.0;     // summary only
    std::string status = "ok";     // ok | failed
};

struct AblationResult {
    std::vector<AblationRow> rows;
};

// One pretraining + linear probe per (value, repeat); every value runs under
// the identical seed set {train.seed + r}. Failed cells are recorded and the
// sweep continues. CSV schema:
// axis_value,repeat,probe_accuracy,mean_loss_final,status with a summary row
// per value (repeat column "summary", status "ste=<accuracy ste>").
AblationResult run_ablation(const AblationPlan& plan, const Dataset& train_ds,
                            const Dataset& val_ds, const Dataset& test_ds,
                            const std::filesystem::path& out_csv);

}  // namespace pointdisc
