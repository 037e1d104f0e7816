#include "pointdisc/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "pointdisc/error.hpp"

namespace pointdisc {

void TrainConfig::validate() const {
    if (batch_size < 1) throw InvalidInputError("train: batch_size must be >= 1");
    if (epochs < 1) throw InvalidInputError("train: epochs must be >= 1");
    if (lr <= 0.0 || lr_finetune <= 0.0 || lr_floor <= 0.0)
        throw InvalidInputError("train: learning rates must be > 0");
    if (decay_factor <= 0.0 || decay_factor > 1.0)
        throw InvalidInputError("train: decay_factor must be in (0, 1]");
    if (decay_every < 1) throw InvalidInputError("train: decay_every must be >= 1");
    if (checkpoint_every < 1) throw InvalidInputError("train: checkpoint_every must be >= 1");
    loss.validate();
}

OptimState OptimState::for_model(Model& model) {
    OptimState s;
    model.visit_params([&s](const std::string& name, Param& p) {
        s.names.push_back(name);
        s.m.emplace_back(Tensor(p.value.shape));
        s.v.emplace_back(Tensor(p.value.shape));
    });
    return s;
}

void adam_step(Model& model, OptimState& state, double lr, const AdamHyper& hyper) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.step));
    std::size_t i = 0;
    model.visit_params([&](const std::string& name, Param& p) {
        if (i >= state.names.size() || state.names[i] != name)
            throw InvalidInputError("adam_step: optimizer state does not match parameter " + name);
        auto m = as_vec(state.m[i]);
        auto v = as_vec(state.v[i]);
        const auto g = as_vec(p.grad);
        auto w = as_vec(p.value);
        m.array() = hyper.beta1 * m.array() + (1.0 - hyper.beta1) * g.array();
        v.array() = hyper.beta2 * v.array() + (1.0 - hyper.beta2) * g.array().square();
        w.array() -=
            lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + hyper.eps));
        if (hyper.weight_decay > 0.0) w -= lr * hyper.weight_decay * w;
        ++i;
    });
    if (i != state.names.size())
        throw InvalidInputError("adam_step: optimizer state has extra tensors");
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
    const auto steps = static_cast<double>(epoch / cfg.decay_every);
    return std::max(cfg.lr_floor, cfg.lr * std::pow(cfg.decay_factor, steps));
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

namespace {

constexpr std::uint32_t kPdckVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const char* what) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

void write_tensor(std::ostream& os, const std::string& name, const Tensor& t) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

}  // namespace

void checkpoint_save(const std::filesystem::path& path, Model& model, const OptimState* optim,
                     const CheckpointMeta& meta) {
    std::vector<std::pair<std::string, const Tensor*>> table;
    model.visit_params([&table](const std::string& name, Param& p) {
        table.emplace_back(name, &p.value);
    });
    model.visit_state([&table](const std::string& name, Tensor& t) {
        table.emplace_back(name, &t);
    });
    if (optim) {
        for (std::size_t i = 0; i < optim->names.size(); ++i) {
            table.emplace_back(optim->names[i] + ".adam_m", &optim->m[i]);
            table.emplace_back(optim->names[i] + ".adam_v", &optim->v[i]);
        }
    }

    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("checkpoint_save: cannot open " + path.string());
    os.write("PDCK", 4);
    write_pod<std::uint32_t>(os, kPdckVersion);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(meta.config_text.size()));
    os.write(meta.config_text.data(), static_cast<std::streamsize>(meta.config_text.size()));
    write_pod<std::uint64_t>(os, meta.epoch);
    for (std::uint64_t w : meta.rng_state) write_pod<std::uint64_t>(os, w);
    write_pod<std::uint64_t>(os, optim ? optim->step : 0);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(table.size()));
    for (const auto& [name, t] : table) write_tensor(os, name, *t);
    if (!os) throw FormatError("checkpoint_save: write failed for " + path.string());
}

CheckpointMeta checkpoint_load(const std::filesystem::path& path, Model& model,
                               OptimState* optim) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("checkpoint_load: cannot open " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PDCK", 4) != 0)
        throw FormatError("checkpoint_load: bad magic in " + path.string());
    const auto version = read_pod<std::uint32_t>(is, "version");
    if (version != kPdckVersion)
        throw FormatError("checkpoint_load: unsupported version " + std::to_string(version));

    CheckpointMeta meta;
    const auto cfg_len = read_pod<std::uint32_t>(is, "config length");
    meta.config_text.resize(cfg_len);
    is.read(meta.config_text.data(), cfg_len);
    if (!is) throw FormatError("checkpoint_load: truncated config blob");
    meta.epoch = read_pod<std::uint64_t>(is, "epoch");
    for (auto& w : meta.rng_state) w = read_pod<std::uint64_t>(is, "rng state");
    const auto adam_step_count = read_pod<std::uint64_t>(is, "adam step");

    // expected targets
    std::map<std::string, Tensor*> expect;
    model.visit_params([&expect](const std::string& name, Param& p) {
        expect[name] = &p.value;
    });
    model.visit_state([&expect](const std::string& name, Tensor& t) { expect[name] = &t; });
    if (optim) {
        if (optim->names.empty()) *optim = OptimState::for_model(model);
        optim->step = adam_step_count;
        for (std::size_t i = 0; i < optim->names.size(); ++i) {
            expect[optim->names[i] + ".adam_m"] = &optim->m[i];
            expect[optim->names[i] + ".adam_v"] = &optim->v[i];
        }
    }

    const auto count = read_pod<std::uint32_t>(is, "tensor count");
    std::size_t applied = 0;
    for (std::uint32_t e = 0; e < count; ++e) {
        const auto name_len = read_pod<std::uint32_t>(is, "tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("checkpoint_load: truncated tensor name");
        const auto ndim = read_pod<std::uint32_t>(is, "tensor rank");
        std::vector<std::size_t> shape(ndim);
        for (auto& d : shape) d = read_pod<std::uint64_t>(is, "tensor dim");
        const std::size_t numel = Tensor::numel_of(shape);

        const bool is_adam = name.ends_with(".adam_m") || name.ends_with(".adam_v");
        auto it = expect.find(name);
        if (it == expect.end()) {
            if (is_adam && !optim) {  // weights-only load skips optimizer moments
                is.seekg(static_cast<std::streamoff>(numel * sizeof(double)), std::ios::cur);
                if (!is) throw FormatError("checkpoint_load: truncated tensor data");
                continue;
            }
            throw FormatError("checkpoint_load: unexpected tensor '" + name + "'");
        }
        if (it->second->shape != shape) {
            std::ostringstream msg;
            msg << "checkpoint_load: shape mismatch for tensor '" << name << "' (file";
            for (std::size_t d : shape) msg << " " << d;
            msg << ", model";
            for (std::size_t d : it->second->shape) msg << " " << d;
            msg << ")";
            throw FormatError(msg.str());
        }
        is.read(reinterpret_cast<char*>(it->second->data.data()),
                static_cast<std::streamsize>(numel * sizeof(double)));
        if (!is) throw FormatError("checkpoint_load: truncated tensor data for '" + name + "'");
        expect.erase(it);
        ++applied;
    }
    for (const auto& [name, t] : expect)
        throw FormatError("checkpoint_load: missing tensor '" + name + "'");
    (void)applied;
    is.peek();
    if (!is.eof()) throw FormatError("checkpoint_load: trailing bytes in " + path.string());
    return meta;
}

// ---------------------------------------------------------------------------
// pretraining loop
// ---------------------------------------------------------------------------

namespace {

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                   Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t at = 0; at < n; at += batch_size) {
        const std::size_t take = std::min(batch_size, n - at);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(at + take));
    }
    // a singleton tail cannot feed train-mode batch normalization; fold it in
    if (batches.size() > 1 && batches.back().size() == 1) {
        batches[batches.size() - 2].push_back(batches.back().front());
        batches.pop_back();
    }
    return batches;
}

}  // namespace

PretrainResult pretrain(Model& model, OptimState& optim, const Dataset& dataset,
                        const TrainConfig& cfg, const std::string& config_echo,
                        const std::filesystem::path& checkpoint_path,
                        const std::filesystem::path& metrics_path, std::size_t start_epoch) {
    cfg.validate();
    if (dataset.clouds.empty()) throw InvalidInputError("pretrain: empty dataset");
    if (dataset.clouds.size() == 1 && cfg.batch_size == 1)
        throw InvalidInputError("pretrain: need at least 2 clouds per step for batch statistics");

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, start_epoch == 0 ? std::ios::trunc : std::ios::app);
        if (!metrics) throw FormatError("pretrain: cannot open metrics file " +
                                        metrics_path.string());
        if (start_epoch == 0) {
            std::istringstream echo(config_echo);
            for (std::string line; std::getline(echo, line);) metrics << "# " << line << "\n";
            metrics << "epoch,mean_loss,lr,wall_seconds\n";
        }
    }

    auto save = [&](std::size_t completed_epochs) {
        if (checkpoint_path.empty()) return;
        CheckpointMeta meta;
        meta.config_text = config_echo;
        meta.epoch = completed_epochs;
        meta.rng_state = derive_rng(cfg.seed, StreamTag::misc, completed_epochs).state();
        checkpoint_save(checkpoint_path, model, &optim, meta);
    };

    PretrainResult result;
    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const double lr = lr_at(epoch, cfg);
        Rng shuffle_rng = derive_rng(cfg.seed, StreamTag::shuffle, epoch);
        const auto batches = make_batches(dataset.clouds.size(), cfg.batch_size, shuffle_rng);

        double loss_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<PointCloud> clouds;
            clouds.reserve(batches[b].size());
            for (std::size_t idx : batches[b]) clouds.push_back(normalize_cloud(dataset.clouds[idx]));

            model.zero_grad();
            BatchLossResult res;
            try {
                res = batch_loss_with_groups(model, clouds, cfg.loss, cfg.seed, epoch, b,
                                             Mode::train, true, true);
            } catch (const NumericError& e) {
                std::ostringstream msg;
                msg << "pretrain: aborted at epoch " << epoch << " batch " << b << " (clouds";
                for (std::size_t idx : batches[b]) msg << " " << idx;
                msg << "): " << e.what();
                throw NumericError(msg.str());
            }
            adam_step(model, optim, lr, cfg.adam);
            loss_sum += res.loss;
        }

        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        EpochMetric m{epoch, loss_sum / static_cast<double>(batches.size()), lr, wall};
        result.metrics.push_back(m);
        if (metrics.is_open()) {
            metrics.precision(17);
            metrics << m.epoch << "," << m.mean_loss << "," << m.lr << "," << m.wall_seconds
                    << "\n";
            metrics.flush();
        }
        if ((epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs) save(epoch + 1);
    }
    save(cfg.epochs);
    return result;
}

}  // namespace pointdisc
