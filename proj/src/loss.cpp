#include "pointdisc/loss.hpp"

#include <cmath>

#include "pointdisc/error.hpp"

namespace pointdisc {

void LossConfig::validate() const {
    if (tau <= 0.0) throw InvalidInputError("loss: tau must be > 0");
    if (k < 1 || t < 1) throw InvalidInputError("loss: K and T must be >= 1");
    if (groups_per_cloud < 1) throw InvalidInputError("loss: groups_per_cloud must be >= 1");
    if (active_layers().empty()) throw InvalidInputError("loss: no layers selected");
}

std::vector<LayerId> LossConfig::active_layers() const {
    std::vector<LayerId> ids;
    for (std::size_t l = 0; l < kLayerCount; ++l)
        if (layers[l]) ids.push_back(static_cast<LayerId>(l));
    return ids;
}

// ---------------------------------------------------------------------------
// group construction
// ---------------------------------------------------------------------------

namespace {

// Cycling row picker for the without-replacement mode: runs through a
// shuffled permutation per layer and reshuffles when exhausted.
struct RowPicker {
    std::array<std::vector<std::size_t>, kLayerCount> order;
    std::array<std::size_t, kLayerCount> at{};

    std::size_t pick(std::size_t layer, std::size_t rows, bool with_replacement, Rng& rng) {
        if (with_replacement) return rng.index(rows);
        auto& ord = order[layer];
        auto& pos = at[layer];
        if (ord.size() != rows) {
            ord.resize(rows);
            for (std::size_t i = 0; i < rows; ++i) ord[i] = i;
            pos = rows;  // force a shuffle below
        }
        if (pos >= rows) {
            for (std::size_t i = rows; i > 1; --i) std::swap(ord[i - 1], ord[rng.index(i)]);
            pos = 0;
        }
        return ord[pos++];
    }
};

}  // namespace

std::vector<DiscriminationGroup> build_groups(const PointCloud& cloud,
                                              const std::array<LayerFeatures, kLayerCount>& enc,
                                              const std::array<RowMat, kLayerCount>& adapted,
                                              std::size_t cloud_index, const LossConfig& cfg,
                                              Rng& rng) {
    cfg.validate();
    const std::vector<LayerId> active = cfg.active_layers();

    RowPicker picker;
    std::vector<DiscriminationGroup> groups;
    groups.reserve(cfg.groups_per_cloud);
    for (std::size_t g = 0; g < cfg.groups_per_cloud; ++g) {
        DiscriminationGroup group;
        bool found = false;
        for (int attempt = 0; attempt < 16 && !found; ++attempt) {
            const LayerId layer = cfg.layer_choice == LayerChoice::round_robin
                                      ? active[g % active.size()]
                                      : active[rng.index(active.size())];
            const auto li = std::size_t(layer);
            const std::size_t rows = static_cast<std::size_t>(adapted[li].rows());
            const std::size_t row = picker.pick(li, rows, cfg.z_with_replacement, rng);

            Region region;
            region.center = enc[li].centroids[row];
            region.radius = enc[li].receptive_radius;
            if (layer == LayerId::global) {
                region.member_indices.resize(cloud.size());
                for (std::size_t i = 0; i < cloud.size(); ++i) region.member_indices[i] = i;
            } else {
                region.member_indices = radius_members(cloud, region.center, region.radius);
            }
            if (region.member_indices.empty()) continue;  // skip-and-resample

            group.layer = layer;
            group.cloud_index = cloud_index;
            group.row = row;
            group.z = adapted[li].row(static_cast<Eigen::Index>(row)).transpose();
            group.region = std::move(region);
            found = true;
        }
        if (!found)
            throw InvalidInputError("build_groups: could not find a non-empty region for cloud '" +
                                    cloud.id + "'");

        group.positives =
            sample_positives(cloud, group.region, cfg.k, rng, cfg.positives_with_replacement);
        std::vector<Vec3> pool;
        pool.reserve(group.region.member_indices.size());
        for (std::size_t idx : group.region.member_indices) pool.push_back(cloud.points[idx]);
        NegativeSample negs = sample_negatives(pool, cfg.noise, cfg.t, cloud, group.region, rng);
        group.negatives = std::move(negs.points);
        group.negative_fallbacks = negs.fallback_tally;
        groups.push_back(std::move(group));
    }
    return groups;
}

// ---------------------------------------------------------------------------
// point discrimination loss
// ---------------------------------------------------------------------------

double point_loss(const Vec& scores_pos, const Vec& scores_neg, double tau) {
    Vec dpos, dneg;
    return point_loss_grad(scores_pos, scores_neg, tau, dpos, dneg);
}

double point_loss_grad(const Vec& scores_pos, const Vec& scores_neg, double tau, Vec& dpos,
                       Vec& dneg) {
    if (tau <= 0.0) throw InvalidInputError("point_loss: tau must be > 0");
    if (scores_pos.size() < 1 || scores_neg.size() < 1)
        throw InvalidInputError("point_loss: needs at least one positive and one negative");
    if (!scores_pos.allFinite() || !scores_neg.allFinite())
        throw NumericError("point_loss: non-finite score");

    const auto k = scores_pos.size();
    const auto t = scores_neg.size();
    dpos = Vec::Zero(k);
    dneg = Vec::Zero(t);

    double total = 0.0;
    Vec logits(1 + t);
    for (Eigen::Index i = 0; i < k; ++i) {
        logits(0) = scores_pos(i) / tau;
        logits.tail(t) = scores_neg / tau;
        const auto ce = softmax_cross_entropy(logits, 0);
        total += ce.loss;
        dpos(i) += ce.grad(0) / tau;
        dneg += ce.grad.tail(t) / tau;
    }
    const double inv_k = 1.0 / static_cast<double>(k);
    dpos *= inv_k;
    dneg *= inv_k;
    return total * inv_k;
}

// ---------------------------------------------------------------------------
// model bundle
// ---------------------------------------------------------------------------

Model::Model(const EncoderSpec& spec, NormKind nk, ConditionerKind ck, bool shared_cons,
             std::uint64_t init_seed)
    : encoder(spec, init_seed), consistency(spec.adapt_dim, nk, ck, shared_cons, init_seed) {}

void Model::visit_params(const std::function<void(const std::string&, Param&)>& f) {
    encoder.visit_params(f);
    consistency.visit_params(f);
}

void Model::visit_state(const std::function<void(const std::string&, Tensor&)>& f) {
    encoder.visit_state(f);
    consistency.visit_state(f);
}

void Model::zero_grad() {
    encoder.zero_grad();
    consistency.zero_grad();
}

// ---------------------------------------------------------------------------
// batch loss
// ---------------------------------------------------------------------------

namespace {

struct LayerConsWork {
    std::vector<std::size_t> group_ids;
    ConsBatch batch;
};

BatchLossResult loss_core(Model& model, const std::vector<DiscriminationGroup>& groups,
                          const LossConfig& cfg, Mode mode, bool update_stats, bool compute_grad,
                          const EncodeTape* etape, const AdaptAllTape* atape,
                          const std::array<RowMat, kLayerCount>& z,
                          const std::array<std::size_t, kLayerCount>& per_cloud_rows) {
    BatchLossResult res;
    res.group_count = groups.size();
    if (groups.empty()) throw InvalidInputError("batch_loss: no groups");

    const std::size_t rows_per_group = cfg.k + cfg.t;
    std::array<LayerConsWork, kLayerCount> work;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        if (g.positives.size() != cfg.k || g.negatives.size() != cfg.t)
            throw InvalidInputError("batch_loss: group K/T does not match the config");
        work[std::size_t(g.layer)].group_ids.push_back(gi);
        res.fallback_tally += g.negative_fallbacks;
    }

    // assemble one ConsBatch per layer
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        auto& w = work[l];
        const std::size_t n_groups = w.group_ids.size();
        if (n_groups == 0) continue;
        w.batch.z = RowMat(static_cast<Eigen::Index>(n_groups), z[l].cols());
        w.batch.p = RowMat(static_cast<Eigen::Index>(n_groups * rows_per_group), 3);
        w.batch.seg = Segments::uniform(n_groups, rows_per_group);
        for (std::size_t i = 0; i < n_groups; ++i) {
            const auto& g = groups[w.group_ids[i]];
            const std::size_t zrow = g.cloud_index * per_cloud_rows[l] + g.row;
            w.batch.z.row(static_cast<Eigen::Index>(i)) =
                z[l].row(static_cast<Eigen::Index>(zrow));
            std::size_t r = i * rows_per_group;
            for (const auto& p : g.positives)
                w.batch.p.row(static_cast<Eigen::Index>(r++)) = p.transpose();
            for (const auto& p : g.negatives)
                w.batch.p.row(static_cast<Eigen::Index>(r++)) = p.transpose();
        }
    }

    const double scale =
        cfg.reduction == LossReduction::mean ? 1.0 / static_cast<double>(groups.size()) : 1.0;

    std::array<RowMat, kLayerCount> dz_all;
    double total = 0.0;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        auto& w = work[l];
        if (w.group_ids.empty()) continue;
        ConsNet& net = model.consistency.net_for(static_cast<LayerId>(l));
        ConsTape tape;
        const Vec scores =
            net.forward(w.batch, mode, update_stats, compute_grad ? &tape : nullptr);

        Vec dscore = Vec::Zero(scores.size());
        for (std::size_t i = 0; i < w.group_ids.size(); ++i) {
            const auto base = static_cast<Eigen::Index>(i * rows_per_group);
            const Vec pos = scores.segment(base, static_cast<Eigen::Index>(cfg.k));
            const Vec neg = scores.segment(base + static_cast<Eigen::Index>(cfg.k),
                                           static_cast<Eigen::Index>(cfg.t));
            Vec dpos, dneg;
            total += point_loss_grad(pos, neg, cfg.tau, dpos, dneg);
            dscore.segment(base, static_cast<Eigen::Index>(cfg.k)) = dpos * scale;
            dscore.segment(base + static_cast<Eigen::Index>(cfg.k),
                           static_cast<Eigen::Index>(cfg.t)) = dneg * scale;
        }

        if (compute_grad) {
            RowMat dz_batch, dp_unused;
            net.backward(tape, dscore, &dz_batch, nullptr);
            // scatter per-group z grads back to the adapted feature rows
            if (dz_all[l].size() == 0) dz_all[l] = RowMat::Zero(z[l].rows(), z[l].cols());
            for (std::size_t i = 0; i < w.group_ids.size(); ++i) {
                const auto& g = groups[w.group_ids[i]];
                const std::size_t zrow = g.cloud_index * per_cloud_rows[l] + g.row;
                dz_all[l].row(static_cast<Eigen::Index>(zrow)) +=
                    dz_batch.row(static_cast<Eigen::Index>(i));
            }
        }
    }
    res.loss = total * scale;
    if (!std::isfinite(res.loss)) throw NumericError("batch_loss: non-finite loss");

    if (compute_grad) {
        auto dfeat = model.encoder.adapt_backward(*atape, dz_all);
        model.encoder.encode_backward(*etape, std::move(dfeat));
    }
    return res;
}

}  // namespace

BatchLossResult batch_loss(Model& model, const std::vector<PointCloud>& clouds,
                           const std::vector<DiscriminationGroup>& groups, const LossConfig& cfg,
                           Mode mode, bool update_stats, bool compute_grad) {
    cfg.validate();
    EncodeTape etape;
    AdaptAllTape atape;
    model.encoder.encode_batch(clouds, mode, update_stats, &etape);
    const auto z = model.encoder.adapt_all(etape.out, mode, update_stats,
                                           compute_grad ? &atape : nullptr);
    std::array<std::size_t, kLayerCount> per_cloud{};
    for (std::size_t l = 0; l < kLayerCount; ++l) per_cloud[l] = etape.out.layers[l].per_cloud;
    return loss_core(model, groups, cfg, mode, update_stats, compute_grad, &etape,
                     compute_grad ? &atape : nullptr, z, per_cloud);
}

BatchLossResult batch_loss_with_groups(Model& model, const std::vector<PointCloud>& clouds,
                                       const LossConfig& cfg, std::uint64_t seed,
                                       std::uint64_t epoch, std::uint64_t batch_index, Mode mode,
                                       bool update_stats, bool compute_grad,
                                       std::vector<DiscriminationGroup>* groups_out) {
    cfg.validate();
    EncodeTape etape;
    AdaptAllTape atape;
    model.encoder.encode_batch(clouds, mode, update_stats, &etape);
    const auto z = model.encoder.adapt_all(etape.out, mode, update_stats,
                                           compute_grad ? &atape : nullptr);

    std::array<std::size_t, kLayerCount> per_cloud{};
    for (std::size_t l = 0; l < kLayerCount; ++l) per_cloud[l] = etape.out.layers[l].per_cloud;

    std::vector<DiscriminationGroup> groups;
    groups.reserve(clouds.size() * cfg.groups_per_cloud);
    for (std::size_t c = 0; c < clouds.size(); ++c) {
        std::array<LayerFeatures, kLayerCount> enc;
        std::array<RowMat, kLayerCount> adapted;
        for (std::size_t l = 0; l < kLayerCount; ++l) {
            enc[l] = etape.out.per_cloud(c, static_cast<LayerId>(l));
            adapted[l] = z[l].middleRows(static_cast<Eigen::Index>(c * per_cloud[l]),
                                         static_cast<Eigen::Index>(per_cloud[l]));
        }
        Rng rng = derive_rng(seed, StreamTag::groups, epoch, batch_index, c);
        auto cloud_groups = build_groups(clouds[c], enc, adapted, c, cfg, rng);
        for (auto& g : cloud_groups) groups.push_back(std::move(g));
    }

    BatchLossResult res = loss_core(model, groups, cfg, mode, update_stats, compute_grad, &etape,
                                    compute_grad ? &atape : nullptr, z, per_cloud);
    if (groups_out) *groups_out = std::move(groups);
    return res;
}

}  // namespace pointdisc
