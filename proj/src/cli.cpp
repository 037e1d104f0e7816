#include "pointdisc/cli.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "pointdisc/ablate.hpp"
#include "pointdisc/config.hpp"
#include "pointdisc/error.hpp"
#include "pointdisc/eval.hpp"
#include "pointdisc/gradcheck.hpp"

namespace pointdisc {

namespace {

namespace fs = std::filesystem;

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> sets;
    std::optional<std::int64_t> seed;
    std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool out_required) {
    cmd->add_option("--config", opts.config_path, "config file (key = value lines)");
    cmd->add_option("--set", opts.sets, "override a config key (key=value, repeatable)");
    cmd->add_option("--seed", opts.seed, "override train.seed");
    auto* out = cmd->add_option("--out", opts.out, "output path");
    if (out_required) out->required();
}

Config resolve_config(const CommonOpts& opts) {
    Config cfg;
    if (!opts.config_path.empty()) {
        std::ifstream in(opts.config_path);
        if (!in)
            throw InvalidInputError("cannot open config file '" + opts.config_path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        cfg = Config::parse(buf.str());
    }
    for (const auto& s : opts.sets) cfg.apply_override(s);
    if (opts.seed) cfg.set("train.seed", std::to_string(*opts.seed));
    return cfg;
}

Dataset load_dataset(const std::string& path) {
    if (path.empty()) throw InvalidInputError("missing dataset path");
    return dataset_read(path);
}

int cmd_gen_data(const CommonOpts& opts) {
    const Config cfg = resolve_config(opts);
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    const Dataset ds = gen_synthetic_dataset(
        static_cast<std::size_t>(cfg.get_int("data.clouds_per_class")),
        static_cast<std::size_t>(cfg.get_int("data.n_points")), seed, cfg.get("data.split"));
    dataset_write(ds, opts.out);
    std::cerr << "wrote " << ds.clouds.size() << " clouds (" << cfg.get("data.n_points")
              << " points each, seed " << seed << ") to " << opts.out << "\n";
    return 0;
}

int cmd_convert_off(const CommonOpts& opts, const std::string& in_dir) {
    const Config cfg = resolve_config(opts);
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    const Dataset ds =
        convert_off_directory(in_dir, static_cast<std::size_t>(cfg.get_int("data.n_points")),
                              seed, cfg.get("data.split"));
    dataset_write(ds, opts.out);
    std::cerr << "converted " << ds.clouds.size() << " meshes from " << in_dir << " to "
              << opts.out << "\n";
    return 0;
}

int cmd_pretrain(const CommonOpts& opts, const std::string& data_path,
                 const std::string& metrics_path, const std::string& resume_path) {
    const Config cfg = resolve_config(opts);
    const Dataset ds = load_dataset(data_path);
    TrainConfig tc = train_config_from(cfg);
    Model model = model_from(cfg, tc.seed);
    OptimState optim = OptimState::for_model(model);

    std::size_t start_epoch = 0;
    if (!resume_path.empty()) {
        const CheckpointMeta meta = checkpoint_load(resume_path, model, &optim);
        start_epoch = static_cast<std::size_t>(meta.epoch);
        std::cerr << "resumed from " << resume_path << " at epoch " << start_epoch << "\n";
    }

    const std::string metrics =
        metrics_path.empty() ? opts.out + ".metrics.csv" : metrics_path;
    const PretrainResult res =
        pretrain(model, optim, ds, tc, cfg.echo(), opts.out, metrics, start_epoch);
    if (!res.metrics.empty())
        std::cerr << "pretrained to epoch " << tc.epochs << ", final mean loss "
                  << res.metrics.back().mean_loss << "; checkpoint at " << opts.out << "\n";
    return 0;
}

int cmd_linear_eval(const CommonOpts& opts, const std::string& checkpoint_path,
                    const std::string& train_path, const std::string& val_path,
                    const std::string& test_path) {
    const Config cfg = resolve_config(opts);
    Model model = model_from(cfg, static_cast<std::uint64_t>(cfg.get_int("train.seed")));
    if (!checkpoint_path.empty()) {
        checkpoint_load(checkpoint_path, model, nullptr);
    } else {
        std::cerr << "no checkpoint given; evaluating a freshly initialized encoder\n";
    }
    const FeatureSet ftr = extract_dataset_features(model, load_dataset(train_path));
    const FeatureSet fva = extract_dataset_features(model, load_dataset(val_path));
    const FeatureSet fte = extract_dataset_features(model, load_dataset(test_path));
    const LinearProbeResult res = linear_probe(ftr, fva, fte);

    std::ofstream os(opts.out);
    if (!os) throw FormatError("cannot open " + opts.out);
    {
        std::istringstream echo(cfg.echo());
        for (std::string line; std::getline(echo, line);) os << "# " << line << "\n";
    }
    os << "test_accuracy,val_accuracy,lambda\n";
    os.precision(17);
    os << res.test_accuracy << "," << res.val_accuracy << "," << res.lambda << "\n";
    std::cerr << "linear probe: test accuracy " << res.test_accuracy << " (lambda " << res.lambda
              << ", val " << res.val_accuracy << ") -> " << opts.out << "\n";
    return 0;
}

int cmd_shape_probe(const CommonOpts& opts, const std::string& checkpoint_path,
                    const std::string& data_path, const std::string& ply_dir) {
    const Config cfg = resolve_config(opts);
    Model model = model_from(cfg, static_cast<std::uint64_t>(cfg.get_int("train.seed")));
    if (!checkpoint_path.empty()) checkpoint_load(checkpoint_path, model, nullptr);
    const Dataset ds = load_dataset(data_path);
    if (ds.clouds.empty()) throw InvalidInputError("shape-probe: empty dataset");

    const auto seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    const LayerId layer = parse_layer_id(cfg.get("probe.layer"));
    const auto count = static_cast<std::size_t>(cfg.get_int("probe.count"));
    const auto n_samples = static_cast<std::size_t>(cfg.get_int("probe.n_samples"));
    const auto top_k = static_cast<std::size_t>(cfg.get_int("probe.top_k"));

    if (fs::exists(opts.out)) fs::remove(opts.out);
    double ratio_sum = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const PointCloud cloud = normalize_cloud(ds.clouds[i % ds.clouds.size()]);
        EncodeTape tape;
        model.encoder.encode_batch({cloud}, Mode::eval, false, &tape);
        const std::size_t rows = tape.out.layers[std::size_t(layer)].per_cloud;
        Rng pick = derive_rng(seed, StreamTag::probe, 0xC3, i);
        const std::size_t centroid = pick.index(rows);
        const ProbeResult res = shape_probe(model, cloud, layer, centroid, n_samples, top_k,
                                            seed + i);
        append_probe_csv(opts.out, i, res, i == 0 ? cfg.echo() : "");
        if (!ply_dir.empty()) {
            fs::create_directories(ply_dir);
            export_probe_ply(res, cloud,
                             fs::path(ply_dir) / ("probe_" + std::to_string(i) + ".ply"));
        }
        ratio_sum += res.control_distance > 0.0 ? res.top_k_distance / res.control_distance : 0.0;
    }
    std::cerr << "shape-probe: " << count << " probes at " << kLayerNames[std::size_t(layer)]
              << ", mean top-k/control distance ratio "
              << ratio_sum / static_cast<double>(count) << " -> " << opts.out << "\n";
    return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& plan_path,
               const std::string& train_path, const std::string& val_path,
               const std::string& test_path) {
    Config cfg = resolve_config(opts);
    if (!plan_path.empty()) {
        std::ifstream in(plan_path);
        if (!in) throw InvalidInputError("cannot open plan file '" + plan_path + "'");
        std::ostringstream buf;
        buf << in.rdbuf();
        // plan files share the config key space and overlay the base config
        std::istringstream lines(buf.str());
        std::string line;
        int line_no = 0;
        while (std::getline(lines, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line = line.substr(0, hash);
            const auto eq = line.find('=');
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            if (eq == std::string::npos)
                throw ParseError("expected 'key = value' in plan file", line_no);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
            };
            cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no);
        }
    }
    const AblationPlan plan = AblationPlan::from_config(cfg);
    const Dataset train_ds = load_dataset(train_path);
    const Dataset val_ds = load_dataset(val_path);
    const Dataset test_ds = load_dataset(test_path);
    const AblationResult res = run_ablation(plan, train_ds, val_ds, test_ds, opts.out);
    std::size_t failed = 0;
    for (const auto& r : res.rows)
        if (!r.is_summary && r.status == "failed") ++failed;
    std::cerr << "ablation: " << res.rows.size() << " rows (" << failed << " failed cells) -> "
              << opts.out << "\n";
    return failed == 0 ? 0 : 1;
}

int cmd_gradcheck(const CommonOpts& opts) {
    const Config cfg = resolve_config(opts);
    const auto rows =
        run_gradcheck_suite(cfg, static_cast<std::uint64_t>(cfg.get_int("train.seed")));
    const std::string table = format_gradcheck_table(rows);
    std::cerr << table;
    if (!opts.out.empty()) {
        std::ofstream os(opts.out);
        if (!os) throw FormatError("cannot open " + opts.out);
        os << table;
    }
    return all_pass(rows) ? 0 : 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
#if defined(__GLIBC__)
    // keep large activation buffers on the heap instead of mmap round-trips
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
    CLI::App app{"PointDisc: self-supervised point-cloud representation learning"};
    app.require_subcommand(1);
    app.failure_message(CLI::FailureMessage::help);

    CommonOpts gen_opts, off_opts, pre_opts, eval_opts, probe_opts, abl_opts, gc_opts;
    std::string off_in, pre_data, pre_metrics, pre_resume;
    std::string eval_ckpt, eval_train, eval_val, eval_test;
    std::string probe_ckpt, probe_data, probe_ply_dir;
    std::string abl_plan, abl_train, abl_val, abl_test;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic .pdsc dataset");
    add_common(gen, gen_opts, true);

    auto* off = app.add_subcommand("convert-off", "sample a directory of OFF meshes into .pdsc");
    add_common(off, off_opts, true);
    off->add_option("--in", off_in, "directory of <class>/*.off files")->required();

    auto* pre = app.add_subcommand("pretrain", "self-supervised pretraining");
    add_common(pre, pre_opts, true);
    pre->add_option("--data", pre_data, "training .pdsc")->required();
    pre->add_option("--metrics", pre_metrics, "metrics CSV (default <out>.metrics.csv)");
    pre->add_option("--resume", pre_resume, "checkpoint to resume from");

    auto* lev = app.add_subcommand("linear-eval", "linear probe on frozen features");
    add_common(lev, eval_opts, true);
    lev->add_option("--checkpoint", eval_ckpt, "trained .pdck (omit for random init)");
    lev->add_option("--train", eval_train, "probe training .pdsc")->required();
    lev->add_option("--val", eval_val, "validation .pdsc")->required();
    lev->add_option("--test", eval_test, "test .pdsc")->required();

    auto* prb = app.add_subcommand("shape-probe", "score uniform samples against learned features");
    add_common(prb, probe_opts, true);
    prb->add_option("--checkpoint", probe_ckpt, "trained .pdck (omit for random init)");
    prb->add_option("--data", probe_data, "probe .pdsc")->required();
    prb->add_option("--ply-dir", probe_ply_dir, "directory for per-probe PLY exports");

    auto* abl = app.add_subcommand("ablate", "run an ablation plan");
    add_common(abl, abl_opts, true);
    abl->add_option("--plan", abl_plan, "plan file (config overlay, ablate.* keys)");
    abl->add_option("--data-train", abl_train, "pretraining .pdsc")->required();
    abl->add_option("--data-val", abl_val, "validation .pdsc")->required();
    abl->add_option("--data-test", abl_test, "test .pdsc")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification of all blocks");
    add_common(gc, gc_opts, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_opts);
        if (off->parsed()) return cmd_convert_off(off_opts, off_in);
        if (pre->parsed()) return cmd_pretrain(pre_opts, pre_data, pre_metrics, pre_resume);
        if (lev->parsed())
            return cmd_linear_eval(eval_opts, eval_ckpt, eval_train, eval_val, eval_test);
        if (prb->parsed()) return cmd_shape_probe(probe_opts, probe_ckpt, probe_data, probe_ply_dir);
        if (abl->parsed()) return cmd_ablate(abl_opts, abl_plan, abl_train, abl_val, abl_test);
        if (gc->parsed()) return cmd_gradcheck(gc_opts);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    std::cerr << "no subcommand given\n" << app.help();
    return 2;
}

}  // namespace pointdisc
