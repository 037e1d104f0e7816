#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pointdisc/config.hpp"
#include "pointdisc/train.hpp"

using namespace pointdisc;

namespace {

namespace fs = std::filesystem;

Config tiny_config() {
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
    cfg.set("loss.T", "4");
    cfg.set("loss.groups_per_cloud", "6");
    cfg.set("train.batch_size", "4");
    cfg.set("train.epochs", "2");
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
    Model model = model_from(tiny_config(), 1);
    OptimState optim = OptimState::for_model(model);
    std::vector<double> before;
    model.visit_params([&](const std::string&, Param& p) {
        for (double v : p.value.data) before.push_back(v);
    });
    model.zero_grad();
    adam_step(model, optim, 0.1, AdamHyper{});
    std::size_t i = 0;
    model.visit_params([&](const std::string&, Param& p) {
        for (double v : p.value.data) CHECK(v == before[i++]);
    });
    CHECK(optim.step == 1);
}

TEST_CASE("adam first step moves each coordinate by about lr") {
    Model model = model_from(tiny_config(), 2);
    OptimState optim = OptimState::for_model(model);
    std::vector<double> before;
    model.visit_params([&](const std::string&, Param& p) {
        for (double v : p.value.data) before.push_back(v);
        for (auto& g : p.grad.data) g = 0.37;  // any nonzero value
    });
    adam_step(model, optim, 0.01, AdamHyper{});
    std::size_t i = 0;
    model.visit_params([&](const std::string&, Param& p) {
        for (double v : p.value.data) {
            CHECK(std::abs(std::abs(before[i] - v) - 0.01) < 1e-6);
            ++i;
        }
    });
}

TEST_CASE("adam drives a quadratic to zero") {
    // scalar simulation oracle: 100 steps on f(w)=w^2 from w=1, lr=0.1
    double w = 1.0, m = 0.0, v = 0.0;
    const AdamHyper h;
    for (int t = 1; t <= 100; ++t) {
        const double g = 2.0 * w;
        m = h.beta1 * m + (1 - h.beta1) * g;
        v = h.beta2 * v + (1 - h.beta2) * g * g;
        const double mhat = m / (1 - std::pow(h.beta1, t));
        const double vhat = v / (1 - std::pow(h.beta2, t));
        w -= 0.1 * mhat / (std::sqrt(vhat) + h.eps);
    }
    CHECK(std::abs(w) < 0.1);
}

TEST_CASE("lr schedule decays exponentially with a floor") {
    TrainConfig cfg;
    CHECK(lr_at(0, cfg) == 0.001);
    CHECK(lr_at(9, cfg) == 0.001);
    CHECK(lr_at(10, cfg) == doctest::Approx(0.0007));
    CHECK(lr_at(20, cfg) == doctest::Approx(0.00049));
    CHECK(lr_at(1000000, cfg) == cfg.lr_floor);
}

TEST_CASE("checkpoint save/load/save is byte-identical") {
    const Config cfg = tiny_config();
    Model model = model_from(cfg, 3);
    OptimState optim = OptimState::for_model(model);
    // make the state non-trivial
    Rng rng(5);
    model.visit_params([&](const std::string&, Param& p) {
        for (auto& g : p.grad.data) g = rng.normal();
    });
    adam_step(model, optim, 0.01, AdamHyper{});

    CheckpointMeta meta;
    meta.config_text = cfg.echo();
    meta.epoch = 7;
    meta.rng_state = {1, 2, 3, 4};

    const auto p1 = fs::temp_directory_path() / "pd_ckpt_a.pdck";
    const auto p2 = fs::temp_directory_path() / "pd_ckpt_b.pdck";
    checkpoint_save(p1, model, &optim, meta);

    Model loaded = model_from(cfg, 99);  // different init, fully overwritten
    OptimState loaded_optim = OptimState::for_model(loaded);
    const CheckpointMeta back = checkpoint_load(p1, loaded, &loaded_optim);
    CHECK(back.epoch == 7);
    CHECK(back.config_text == meta.config_text);
    CHECK(back.rng_state == meta.rng_state);
    CHECK(loaded_optim.step == optim.step);

    checkpoint_save(p2, loaded, &loaded_optim, back);
    CHECK(file_bytes(p1) == file_bytes(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("checkpoint load rejects mismatched architectures naming the tensor") {
    const Config cfg = tiny_config();
    Model model = model_from(cfg, 3);
    const auto path = fs::temp_directory_path() / "pd_ckpt_mismatch.pdck";
    CheckpointMeta meta;
    meta.config_text = cfg.echo();
    checkpoint_save(path, model, nullptr, meta);

    Config other = tiny_config();
    other.set("encoder.l1.mlp", "8,24");  // different l1 output width
    Model wrong = model_from(other, 3);
    try {
        checkpoint_load(path, wrong, nullptr);
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(std::string(e.what()).find("enc.l1.mlp1.w") != std::string::npos);
    }
    fs::remove(path);
}

TEST_CASE("checkpoint load detects truncation and bad magic") {
    const Config cfg = tiny_config();
    Model model = model_from(cfg, 4);
    const auto path = fs::temp_directory_path() / "pd_ckpt_trunc.pdck";
    CheckpointMeta meta;
    meta.config_text = "x = y";
    checkpoint_save(path, model, nullptr, meta);

    const auto size = fs::file_size(path);
    fs::resize_file(path, size - 9);
    Model target = model_from(cfg, 5);
    CHECK_THROWS_AS(checkpoint_load(path, target, nullptr), FormatError);

    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOPE", 4);
    }
    CHECK_THROWS_AS(checkpoint_load(path, target, nullptr), FormatError);
    fs::remove(path);
}

TEST_CASE("pretrain smoke run: finite losses, metrics csv, determinism") {
    const Config cfg = tiny_config();
    const Dataset ds = gen_synthetic_dataset(3, 64, 11, "train");
    const TrainConfig tc = train_config_from(cfg);

    const auto ck1 = fs::temp_directory_path() / "pd_run1.pdck";
    const auto mx1 = fs::temp_directory_path() / "pd_run1.csv";
    Model m1 = model_from(cfg, tc.seed);
    OptimState o1 = OptimState::for_model(m1);
    const PretrainResult r1 = pretrain(m1, o1, ds, tc, cfg.echo(), ck1, mx1);
    REQUIRE(r1.metrics.size() == 2);
    for (const auto& m : r1.metrics) CHECK(std::isfinite(m.mean_loss));

    // identical seeds give identical loss curves bit for bit
    const auto ck2 = fs::temp_directory_path() / "pd_run2.pdck";
    Model m2 = model_from(cfg, tc.seed);
    OptimState o2 = OptimState::for_model(m2);
    const PretrainResult r2 = pretrain(m2, o2, ds, tc, cfg.echo(), ck2, {});
    for (std::size_t e = 0; e < 2; ++e) CHECK(r1.metrics[e].mean_loss == r2.metrics[e].mean_loss);
    CHECK(file_bytes(ck1) == file_bytes(ck2));

    // metrics csv has the config echo and the documented header
    std::ifstream mf(mx1);
    std::string line;
    bool saw_header = false;
    while (std::getline(mf, line))
        if (line == "epoch,mean_loss,lr,wall_seconds") saw_header = true;
    CHECK(saw_header);

    fs::remove(ck1);
    fs::remove(ck2);
    fs::remove(mx1);
}

TEST_CASE("resume reproduces an uninterrupted run exactly") {
    Config cfg = tiny_config();
    cfg.set("train.epochs", "4");
    cfg.set("train.checkpoint_every", "2");
    const Dataset ds = gen_synthetic_dataset(3, 64, 13, "train");
    const TrainConfig tc = train_config_from(cfg);

    const auto ck_full = fs::temp_directory_path() / "pd_full.pdck";
    Model full = model_from(cfg, tc.seed);
    OptimState full_opt = OptimState::for_model(full);
    const PretrainResult full_run = pretrain(full, full_opt, ds, tc, cfg.echo(), ck_full, {});

    // run to the epoch-2 checkpoint, then resume from it
    Config half_cfg = cfg;
    half_cfg.set("train.epochs", "2");
    const TrainConfig tc_half = train_config_from(half_cfg);
    const auto ck_half = fs::temp_directory_path() / "pd_half.pdck";
    Model half = model_from(cfg, tc.seed);
    OptimState half_opt = OptimState::for_model(half);
    pretrain(half, half_opt, ds, tc_half, half_cfg.echo(), ck_half, {});

    Model resumed = model_from(cfg, 12345);  // init overwritten by the load
    OptimState resumed_opt = OptimState::for_model(resumed);
    const CheckpointMeta meta = checkpoint_load(ck_half, resumed, &resumed_opt);
    REQUIRE(meta.epoch == 2);
    const auto ck_resumed = fs::temp_directory_path() / "pd_resumed.pdck";
    const PretrainResult tail =
        pretrain(resumed, resumed_opt, ds, tc, cfg.echo(), ck_resumed, {}, meta.epoch);

    REQUIRE(tail.metrics.size() == 2);
    CHECK(std::abs(tail.metrics[0].mean_loss - full_run.metrics[2].mean_loss) < 1e-12);
    CHECK(std::abs(tail.metrics[1].mean_loss - full_run.metrics[3].mean_loss) < 1e-12);
    CHECK(file_bytes(ck_full) == file_bytes(ck_resumed));

    fs::remove(ck_full);
    fs::remove(ck_half);
    fs::remove(ck_resumed);
}

TEST_CASE("pretrain aborts on a non-finite loss naming the batch") {
    const Config cfg = tiny_config();
    const Dataset ds = gen_synthetic_dataset(2, 64, 17, "train");
    Model model = model_from(cfg, 1);
    OptimState optim = OptimState::for_model(model);
    model.encoder.sa[0].ws[0].value.data[0] = std::nan("");
    try {
        pretrain(model, optim, ds, train_config_from(cfg), "", {}, {});
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 0") != std::string::npos);
        CHECK(msg.find("batch 0") != std::string::npos);
    }
}

TEST_CASE("pretrain rejects an empty dataset") {
    const Config cfg = tiny_config();
    Model model = model_from(cfg, 1);
    OptimState optim = OptimState::for_model(model);
    Dataset empty;
    CHECK_THROWS_AS(pretrain(model, optim, empty, train_config_from(cfg), "", {}, {}),
                    InvalidInputError);
}
