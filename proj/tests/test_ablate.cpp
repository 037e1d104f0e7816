#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "pointdisc/ablate.hpp"

using namespace pointdisc;

namespace {

namespace fs = std::filesystem;

Config tiny_base() {
    Config cfg;
    cfg.set("data.n_points", "64");
    cfg.set("encoder.l1.centroids", "16");
    cfg.set("encoder.l1.radius", "0.35");
    cfg.set("encoder.l1.neighbors", "8");
    cfg.set("encoder.l1.mlp", "8,16");
    cfg.set("encoder.l2.centroids", "8");
    cfg.set("encoder.l2.radius", "0.6");
    cfg.set("encoder.l2.neighbors", "8");
    cfg.set("encoder.l2.mlp", "16,24");
    cfg.set("encoder.l3.centroids", "4");
    cfg.set("encoder.l3.radius", "0.9");
    cfg.set("encoder.l3.neighbors", "4");
    cfg.set("encoder.l3.mlp", "24,32");
    cfg.set("encoder.global.mlp", "32,32");
    cfg.set("encoder.adapt_dim", "16");
    cfg.set("loss.T", "3");
    cfg.set("loss.groups_per_cloud", "4");
    cfg.set("train.batch_size", "4");
    cfg.set("train.epochs", "1");
    cfg.set("ablate.repeats", "2");
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("run_ablation emits schema rows plus summaries and reruns bit-identically") {
    Config base = tiny_base();
    base.set("ablate.axis", "T_sweep");
    base.set("ablate.values", "1,3");
    const AblationPlan plan = AblationPlan::from_config(base);

    const Dataset train_ds = gen_synthetic_dataset(2, 64, 41, "train");
    const Dataset val_ds = gen_synthetic_dataset(1, 64, 42, "val");
    const Dataset test_ds = gen_synthetic_dataset(1, 64, 43, "test");

    const auto csv1 = fs::temp_directory_path() / "pd_abl1.csv";
    const AblationResult res = run_ablation(plan, train_ds, val_ds, test_ds, csv1);

    // 2 values x (2 repeats + 1 summary)
    REQUIRE(res.rows.size() == 6);
    std::size_t summaries = 0;
    for (const auto& r : res.rows) {
        if (r.is_summary) {
            ++summaries;
            // summary recomputes exactly from the member rows
            double acc = 0.0, loss = 0.0;
            std::size_t n = 0;
            for (const auto& m : res.rows)
                if (!m.is_summary && m.axis_value == r.axis_value && m.status == "ok") {
                    acc += m.probe_accuracy;
                    loss += m.mean_loss_final;
                    ++n;
                }
            REQUIRE(n == 2);
            CHECK(r.probe_accuracy == doctest::Approx(acc / 2.0).epsilon(1e-15));
            CHECK(r.mean_loss_final == doctest::Approx(loss / 2.0).epsilon(1e-15));
        } else {
            CHECK(r.status == "ok");
        }
    }
    CHECK(summaries == 2);

    const auto csv2 = fs::temp_directory_path() / "pd_abl2.csv";
    run_ablation(plan, train_ds, val_ds, test_ds, csv2);
    CHECK(file_bytes(csv1) == file_bytes(csv2));

    // header carries the schema line and the reference-value comments
    std::ifstream f(csv1);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CHECK(text.find("axis_value,repeat,probe_accuracy,mean_loss_final,status") !=
          std::string::npos);
    CHECK(text.find("92.30") != std::string::npos);
    CHECK(text.find("90.12") != std::string::npos);

    fs::remove(csv1);
    fs::remove(csv2);
}

TEST_CASE("ablation cells differ from the base config only in the axis keys") {
    Config base = tiny_base();
    base.set("ablate.axis", "cbn_vs_bn");
    const AblationPlan plan = AblationPlan::from_config(base);
    for (const auto& v : plan.values) {
        const auto d = plan.config_for(v).diff(base);
        for (const auto& [key, val] : d) CHECK(key == "consistency.norm");
    }
}

TEST_CASE("a failing cell is recorded and the sweep continues") {
    Config base = tiny_base();
    base.set("ablate.axis", "T_sweep");
    base.set("ablate.values", "3");
    base.set("ablate.repeats", "1");
    AblationPlan plan = AblationPlan::from_config(base);

    // single-cloud training set with batch folding still works; an EMPTY val
    // set cannot be probed, so the cell fails but the run completes
    const Dataset train_ds = gen_synthetic_dataset(1, 64, 44, "train");
    Dataset empty_val;
    empty_val.class_names = shape_class_names();
    Dataset test_ds = gen_synthetic_dataset(1, 64, 45, "test");
    CHECK_THROWS_AS(run_ablation(plan, train_ds, empty_val, test_ds, {}), InvalidInputError);

    // failure inside a cell (not in dataset validation): break the encoder
    // config so model construction throws for one value only - use T=0
    base.set("ablate.values", "0,3");
    plan = AblationPlan::from_config(base);
    const Dataset val_ds = gen_synthetic_dataset(1, 64, 46, "val");
    const AblationResult res = run_ablation(plan, train_ds, val_ds, test_ds, {});
    REQUIRE(res.rows.size() == 4);
    CHECK(res.rows[0].status == "failed");   // T=0 is invalid
    CHECK(res.rows[1].is_summary);
    CHECK(res.rows[1].status == "failed");
    CHECK(res.rows[2].status == "ok");
    CHECK(res.rows[3].is_summary);
    CHECK(res.rows[3].status == "ok");
}

TEST_CASE("layer_set values reject malformed tokens") {
    Config base = tiny_base();
    base.set("ablate.axis", "layer_set");
    base.set("ablate.values", "l1l2");  // missing +norm
    CHECK_THROWS_AS(AblationPlan::from_config(base), InvalidInputError);
}
