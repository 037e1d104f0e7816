#include "pointdisc/config.hpp"

#include <algorithm>
#include <sstream>

#include "pointdisc/error.hpp"

namespace pointdisc {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(trim(cur));
    return out;
}

std::vector<ConfigKey> build_schema() {
    using CT = ConfigType;
    std::vector<ConfigKey> s;
    auto add = [&s](std::string name, CT type, std::string def, std::string doc,
                    std::vector<std::string> choices = {}) {
        s.push_back({std::move(name), type, std::move(def), std::move(choices), std::move(doc)});
    };

    add("data.n_points", CT::integer, "512", "points per generated cloud");
    add("data.clouds_per_class", CT::integer, "100", "synthetic clouds per class");
    add("data.split", CT::text, "train", "split tag stored in generated .pdsc files");

    add("encoder.l1.centroids", CT::integer, "128", "l1 FPS centroid count");
    add("encoder.l1.radius", CT::floating, "0.25", "l1 grouping radius");
    add("encoder.l1.neighbors", CT::integer, "32", "l1 max neighbors per group");
    add("encoder.l1.mlp", CT::text, "32,32,64", "l1 per-point MLP widths");
    add("encoder.l2.centroids", CT::integer, "32", "l2 FPS centroid count");
    add("encoder.l2.radius", CT::floating, "0.5", "l2 grouping radius");
    add("encoder.l2.neighbors", CT::integer, "32", "l2 max neighbors per group");
    add("encoder.l2.mlp", CT::text, "64,64,128", "l2 per-point MLP widths");
    add("encoder.l3.centroids", CT::integer, "8", "l3 FPS centroid count");
    add("encoder.l3.radius", CT::floating, "0.8", "l3 grouping radius");
    add("encoder.l3.neighbors", CT::integer, "16", "l3 max neighbors per group");
    add("encoder.l3.mlp", CT::text, "128,128,256", "l3 per-point MLP widths");
    add("encoder.global.mlp", CT::text, "256,256", "global layer MLP widths");
    add("encoder.adapt_dim", CT::integer, "256", "shared adapted feature width D");

    add("consistency.norm", CT::choice, "cbn", "normalization inside Cons", {"cbn", "bn"});
    add("consistency.shared", CT::boolean, "false", "share one Cons net across layers");
    add("consistency.conditioner", CT::choice, "parallel",
        "conditioner wiring: two parallel maps or stacked 2-layer MLPs", {"parallel", "stacked"});

    add("loss.tau", CT::floating, "0.1", "softmax temperature");
    add("loss.K", CT::integer, "1", "positives per group");
    add("loss.T", CT::integer, "10", "negatives per group");
    add("loss.groups_per_cloud", CT::integer, "64", "groups sampled per cloud (reference runs use 1000)");
    add("loss.layers", CT::text, "l1,l2,l3,global", "layers the loss is imposed on");
    add("loss.reduction", CT::choice, "mean", "group reduction", {"mean", "sum"});
    add("loss.noise.kind", CT::choice, "uniform", "negative-point noise", {"uniform", "gaussian"});
    add("loss.noise.a", CT::floating, "1", "uniform noise half-width");
    add("loss.noise.sigma", CT::floating, "1", "gaussian noise stddev");
    add("loss.noise.exclusion_radius", CT::floating, "0",
        "reject negatives within this distance of region members (0 = off)");
    add("loss.positives_replacement", CT::boolean, "true",
        "draw positives with replacement; without requires K <= region size");
    add("loss.z_replacement", CT::boolean, "true",
        "draw z_j with replacement; without cycles shuffled row permutations");
    add("loss.layer_choice", CT::choice, "uniform",
        "how groups pick their layer: uniform draw or per-layer quota", {"uniform", "round_robin"});

    add("train.batch_size", CT::integer, "8", "clouds per step (reference runs use 24)");
    add("train.epochs", CT::integer, "100", "pretraining epochs");
    add("train.lr", CT::floating, "0.001", "pretraining learning rate");
    add("train.lr_finetune", CT::floating, "0.0005", "fine-tuning rate, documented companion");
    add("train.decay_factor", CT::floating, "0.7", "lr decay factor");
    add("train.decay_every", CT::integer, "10", "epochs between lr decays");
    add("train.lr_floor", CT::floating, "1e-5", "minimum learning rate");
    add("train.beta1", CT::floating, "0.9", "Adam beta1");
    add("train.beta2", CT::floating, "0.999", "Adam beta2");
    add("train.eps", CT::floating, "1e-8", "Adam epsilon");
    add("train.weight_decay", CT::floating, "0", "L2 weight decay");
    add("train.seed", CT::integer, "0", "master seed for init, shuffle and sampling");
    add("train.checkpoint_every", CT::integer, "25", "epochs between checkpoint writes");

    add("probe.n_samples", CT::integer, "5000", "uniform samples scored per probe");
    add("probe.top_k", CT::integer, "100", "top-scoring points kept per probe");
    add("probe.layer", CT::choice, "l2", "layer probed", {"l1", "l2", "l3", "global"});
    add("probe.count", CT::integer, "20", "probes per shape-probe invocation");

    add("ablate.axis", CT::choice, "T_sweep", "ablation axis",
        {"noise_kind", "T_sweep", "layer_set", "cbn_vs_bn", "exclusion"});
    add("ablate.values", CT::text, "", "comma list of axis values (empty = axis default)");
    add("ablate.repeats", CT::integer, "3", "repeats per ablation value");
    return s;
}

}  // namespace

const std::vector<ConfigKey>& Config::schema() {
    static const std::vector<ConfigKey> s = build_schema();
    return s;
}

const ConfigKey& Config::key_info(const std::string& name) {
    for (const auto& k : schema())
        if (k.name == name) return k;
    throw InvalidInputError("unknown config key '" + name + "'");
}

Config::Config() {
    for (const auto& k : schema()) values_[k.name] = k.default_value;
}

void Config::set(const std::string& key, const std::string& value, int line) {
    auto it = values_.find(key);
    if (it == values_.end()) {
        if (line > 0) throw ParseError("unknown config key '" + key + "'", line);
        throw InvalidInputError("unknown config key '" + key + "'");
    }
    const ConfigKey& info = key_info(key);
    auto fail = [&](const std::string& what) {
        const std::string msg = "config key '" + key + "': " + what + " (got '" + value + "')";
        if (line > 0) throw ParseError(msg, line);
        throw InvalidInputError(msg);
    };
    switch (info.type) {
        case ConfigType::integer: {
            std::size_t pos = 0;
            try {
                (void)std::stoll(value, &pos);
            } catch (const std::exception&) {
                fail("expected an integer");
            }
            if (pos != value.size()) fail("expected an integer");
            break;
        }
        case ConfigType::floating: {
            std::size_t pos = 0;
            try {
                (void)std::stod(value, &pos);
            } catch (const std::exception&) {
                fail("expected a number");
            }
            if (pos != value.size()) fail("expected a number");
            break;
        }
        case ConfigType::boolean:
            if (value != "true" && value != "false") fail("expected true or false");
            break;
        case ConfigType::choice:
            if (std::find(info.choices.begin(), info.choices.end(), value) == info.choices.end())
                fail("expected one of " + [&] {
                    std::string all;
                    for (const auto& c : info.choices) all += (all.empty() ? "" : "|") + c;
                    return all;
                }());
            break;
        case ConfigType::text:
            break;
    }
    it->second = value;
}

std::int64_t Config::get_int(const std::string& key) const { return std::stoll(get(key)); }
double Config::get_float(const std::string& key) const { return std::stod(get(key)); }
bool Config::get_bool(const std::string& key) const { return get(key) == "true"; }

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw InvalidInputError("unknown config key '" + key + "'");
    return it->second;
}

Config Config::parse(const std::string& text) {
    Config cfg;
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected 'key = value', got '" + line + "'", line_no);
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), line_no);
    }
    return cfg;
}

void Config::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos)
        throw InvalidInputError("--set expects key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string Config::echo() const {
    std::ostringstream os;
    for (const auto& k : schema()) os << k.name << " = " << values_.at(k.name) << "\n";
    return os.str();
}

std::map<std::string, std::string> Config::diff(const Config& other) const {
    std::map<std::string, std::string> out;
    for (const auto& [key, value] : values_)
        if (other.values_.at(key) != value) out[key] = value;
    return out;
}

// ---------------------------------------------------------------------------
// config -> domain objects
// ---------------------------------------------------------------------------

namespace {

std::vector<std::size_t> parse_widths(const std::string& text, const std::string& key) {
    std::vector<std::size_t> widths;
    for (const auto& tok : split(text, ',')) {
        if (tok.empty()) throw InvalidInputError("config key '" + key + "': empty MLP width");
        try {
            widths.push_back(static_cast<std::size_t>(std::stoull(tok)));
        } catch (const std::exception&) {
            throw InvalidInputError("config key '" + key + "': bad width '" + tok + "'");
        }
    }
    return widths;
}

}  // namespace

EncoderSpec encoder_spec_from(const Config& cfg) {
    EncoderSpec s;
    s.input_points = static_cast<std::size_t>(cfg.get_int("data.n_points"));
    const char* names[3] = {"l1", "l2", "l3"};
    for (std::size_t l = 0; l < 3; ++l) {
        const std::string p = std::string("encoder.") + names[l] + ".";
        s.layers[l].id = names[l];
        s.layers[l].centroids = static_cast<std::size_t>(cfg.get_int(p + "centroids"));
        s.layers[l].radius = cfg.get_float(p + "radius");
        s.layers[l].neighbors = static_cast<std::size_t>(cfg.get_int(p + "neighbors"));
        s.layers[l].mlp = parse_widths(cfg.get(p + "mlp"), p + "mlp");
        s.layers[l].global = false;
    }
    s.layers[3] = {"global", 1, 0.0, 0, parse_widths(cfg.get("encoder.global.mlp"),
                                                     "encoder.global.mlp"),
                   true};
    s.adapt_dim = static_cast<std::size_t>(cfg.get_int("encoder.adapt_dim"));
    s.validate();
    return s;
}

LossConfig loss_config_from(const Config& cfg) {
    LossConfig lc;
    lc.tau = cfg.get_float("loss.tau");
    lc.k = static_cast<std::size_t>(cfg.get_int("loss.K"));
    lc.t = static_cast<std::size_t>(cfg.get_int("loss.T"));
    lc.groups_per_cloud = static_cast<std::size_t>(cfg.get_int("loss.groups_per_cloud"));
    lc.layers = {false, false, false, false};
    for (const auto& tok : split(cfg.get("loss.layers"), ','))
        lc.layers[std::size_t(parse_layer_id(tok))] = true;
    lc.reduction =
        cfg.get("loss.reduction") == "sum" ? LossReduction::sum : LossReduction::mean;
    lc.noise.kind = cfg.get("loss.noise.kind") == "gaussian" ? NoiseSpec::Kind::gaussian
                                                             : NoiseSpec::Kind::uniform;
    lc.noise.a = cfg.get_float("loss.noise.a");
    lc.noise.sigma = cfg.get_float("loss.noise.sigma");
    lc.noise.exclusion_radius = cfg.get_float("loss.noise.exclusion_radius");
    lc.positives_with_replacement = cfg.get_bool("loss.positives_replacement");
    lc.z_with_replacement = cfg.get_bool("loss.z_replacement");
    lc.layer_choice = cfg.get("loss.layer_choice") == "round_robin" ? LayerChoice::round_robin
                                                                    : LayerChoice::uniform;
    if (lc.noise.kind == NoiseSpec::Kind::uniform && lc.noise.a <= 0.0)
        throw InvalidInputError("config: loss.noise.a must be > 0 for uniform noise");
    if (lc.noise.kind == NoiseSpec::Kind::gaussian && lc.noise.sigma <= 0.0)
        throw InvalidInputError("config: loss.noise.sigma must be > 0 for gaussian noise");
    if (lc.noise.exclusion_radius < 0.0)
        throw InvalidInputError("config: loss.noise.exclusion_radius must be >= 0");
    lc.validate();
    return lc;
}

TrainConfig train_config_from(const Config& cfg) {
    TrainConfig tc;
    tc.batch_size = static_cast<std::size_t>(cfg.get_int("train.batch_size"));
    tc.epochs = static_cast<std::size_t>(cfg.get_int("train.epochs"));
    tc.lr = cfg.get_float("train.lr");
    tc.lr_finetune = cfg.get_float("train.lr_finetune");
    tc.decay_factor = cfg.get_float("train.decay_factor");
    tc.decay_every = static_cast<std::size_t>(cfg.get_int("train.decay_every"));
    tc.lr_floor = cfg.get_float("train.lr_floor");
    tc.adam.beta1 = cfg.get_float("train.beta1");
    tc.adam.beta2 = cfg.get_float("train.beta2");
    tc.adam.eps = cfg.get_float("train.eps");
    tc.adam.weight_decay = cfg.get_float("train.weight_decay");
    tc.seed = static_cast<std::uint64_t>(cfg.get_int("train.seed"));
    tc.checkpoint_every = static_cast<std::size_t>(cfg.get_int("train.checkpoint_every"));
    tc.loss = loss_config_from(cfg);
    tc.validate();
    return tc;
}

Model model_from(const Config& cfg, std::uint64_t init_seed) {
    const EncoderSpec spec = encoder_spec_from(cfg);
    const NormKind nk = cfg.get("consistency.norm") == "bn" ? NormKind::bn : NormKind::cbn;
    const ConditionerKind ck = cfg.get("consistency.conditioner") == "stacked"
                                   ? ConditionerKind::stacked
                                   : ConditionerKind::parallel;
    return Model(spec, nk, ck, cfg.get_bool("consistency.shared"), init_seed);
}

}  // namespace pointdisc
