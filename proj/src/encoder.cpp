#include "pointdisc/encoder.hpp"

#include <cmath>

#include "pointdisc/error.hpp"

namespace pointdisc {

LayerId parse_layer_id(const std::string& name) {
    for (std::size_t i = 0; i < kLayerCount; ++i)
        if (name == kLayerNames[i]) return static_cast<LayerId>(i);
    throw InvalidInputError("unknown layer id '" + name + "'");
}

EncoderSpec EncoderSpec::desk_default() {
    EncoderSpec s;
    s.input_points = 512;
    s.layers[0] = {"l1", 128, 0.25, 32, {32, 32, 64}, false};
    s.layers[1] = {"l2", 32, 0.5, 32, {64, 64, 128}, false};
    s.layers[2] = {"l3", 8, 0.8, 16, {128, 128, 256}, false};
    s.layers[3] = {"global", 1, 0.0, 0, {256, 256}, true};
    s.adapt_dim = 256;
    return s;
}

void EncoderSpec::validate() const {
    double prev_radius = 0.0;
    std::size_t prev_centroids = input_points;
    for (std::size_t l = 0; l + 1 < kLayerCount; ++l) {
        const LayerSpec& ls = layers[l];
        if (ls.mlp.empty()) throw InvalidInputError("encoder: layer " + ls.id + " has empty MLP");
        if (ls.centroids == 0 || ls.centroids >= prev_centroids)
            throw InvalidInputError("encoder: centroid counts must strictly decrease at " + ls.id);
        if (ls.radius <= prev_radius)
            throw InvalidInputError("encoder: radii must strictly increase at " + ls.id);
        if (ls.neighbors < 1)
            throw InvalidInputError("encoder: layer " + ls.id + " needs neighbors >= 1");
        prev_radius = ls.radius;
        prev_centroids = ls.centroids;
    }
    const LayerSpec& g = layers[kLayerCount - 1];
    if (!g.global || g.centroids != 1 || g.radius != 0.0)
        throw InvalidInputError("encoder: last layer must be the global layer (N=1, no radius)");
    if (g.mlp.empty()) throw InvalidInputError("encoder: global layer has empty MLP");
    if (adapt_dim < 1) throw InvalidInputError("encoder: adapt_dim must be >= 1");
}

LayerFeatures EncodeOut::per_cloud(std::size_t cloud, LayerId l) const {
    const BatchLayer& bl = layers[std::size_t(l)];
    if (cloud >= n_clouds) throw InvalidInputError("EncodeOut: cloud index out of range");
    LayerFeatures lf;
    lf.receptive_radius = bl.receptive_radius;
    const std::size_t lo = cloud * bl.per_cloud;
    lf.centroids.assign(bl.centroids.begin() + static_cast<std::ptrdiff_t>(lo),
                        bl.centroids.begin() + static_cast<std::ptrdiff_t>(lo + bl.per_cloud));
    lf.features = bl.features.middleRows(static_cast<Eigen::Index>(lo),
                                         static_cast<Eigen::Index>(bl.per_cloud));
    return lf;
}

// ---------------------------------------------------------------------------
// set abstraction
// ---------------------------------------------------------------------------

namespace {

void fan_in_uniform(Param& w, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.value.shape[0]));
    for (auto& v : w.value.data) v = rng.uniform(-bound, bound);
}

}  // namespace

SetAbstraction::SetAbstraction(const LayerSpec& s, std::size_t in_ch) : spec(s), in_channels(in_ch) {
    std::size_t in = 3 + in_ch;  // relative coords concatenated with source features
    for (std::size_t width : spec.mlp) {
        ws.emplace_back(Param({in, width}));
        bs.emplace_back(Param({width}));
        bns.emplace_back(BatchNorm(width));
        in = width;
    }
}

void SetAbstraction::init_params(Rng& rng) {
    for (auto& w : ws) fan_in_uniform(w, rng);
    for (auto& b : bs) b.value.fill(0.0);
}

BatchLayer SetAbstraction::forward(std::span<const Vec3> src_points, const RowMat& src_feats,
                                   std::size_t n_clouds, Mode mode, bool update_stats,
                                   SaTape* tape) {
    if (n_clouds == 0) throw InvalidInputError("set_abstraction: empty batch");
    if (src_points.size() % n_clouds != 0)
        throw InvalidInputError("set_abstraction: ragged source batch");
    const std::size_t src_per_cloud = src_points.size() / n_clouds;
    if (src_per_cloud < spec.centroids)
        throw InvalidInputError("set_abstraction: " + spec.id + " needs >= " +
                                std::to_string(spec.centroids) + " source points, got " +
                                std::to_string(src_per_cloud));
    if (in_channels > 0 && (static_cast<std::size_t>(src_feats.rows()) != src_points.size() ||
                            static_cast<std::size_t>(src_feats.cols()) != in_channels))
        throw InvalidInputError("set_abstraction: source feature shape mismatch");

    const std::size_t members = spec.global ? src_per_cloud : spec.neighbors;
    const std::size_t groups = n_clouds * spec.centroids;

    BatchLayer out;
    out.per_cloud = spec.centroids;
    out.receptive_radius = spec.global ? 2.0 * std::sqrt(3.0) : spec.radius;
    out.centroids.reserve(groups);

    std::vector<std::size_t> member_rows;
    member_rows.reserve(groups * members);
    for (std::size_t c = 0; c < n_clouds; ++c) {
        const std::size_t base = c * src_per_cloud;
        const auto cloud_pts = src_points.subspan(base, src_per_cloud);
        if (spec.global) {
            out.centroids.emplace_back(Vec3::Zero());
            for (std::size_t i = 0; i < src_per_cloud; ++i) member_rows.push_back(base + i);
        } else {
            const auto centroid_idx = farthest_point_sample(cloud_pts, spec.centroids);
            for (std::size_t ci : centroid_idx) {
                const Vec3 center = cloud_pts[ci];
                out.centroids.push_back(center);
                // (distance, coordinate)-canonical neighbor choice keeps the
                // grouped set independent of the input point order
                const auto nbrs = nearest_in_ball(cloud_pts, center, spec.radius, members);
                for (std::size_t m : nbrs) member_rows.push_back(base + m);
            }
        }
    }

    // grouped rows: [member - centroid | member features]
    const std::size_t rows = member_rows.size();
    RowMat x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(3 + in_channels));
    for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t g = r / members;
        const Vec3 rel = src_points[member_rows[r]] - out.centroids[g];
        x(static_cast<Eigen::Index>(r), 0) = rel.x();
        x(static_cast<Eigen::Index>(r), 1) = rel.y();
        x(static_cast<Eigen::Index>(r), 2) = rel.z();
        if (in_channels > 0)
            x.row(static_cast<Eigen::Index>(r)).tail(static_cast<Eigen::Index>(in_channels)) =
                src_feats.row(static_cast<Eigen::Index>(member_rows[r]));
    }

    SaTape local;
    SaTape& t = tape ? *tape : local;
    t.seg = Segments::uniform(groups, members);
    t.member_src_rows = std::move(member_rows);
    t.src_rows = src_points.size();
    t.in_channels = in_channels;
    t.stage_io.clear();
    t.bn_caches.assign(ws.size(), BnCache{});

    t.stage_io.push_back(std::move(x));
    for (std::size_t k = 0; k < ws.size(); ++k) {
        RowMat h = linear_forward(t.stage_io[k], ws[k], bs[k]);
        h = bns[k].forward(h, mode, update_stats, &t.bn_caches[k]);
        relu_inplace(h);
        t.stage_io.push_back(std::move(h));
    }
    out.features = group_max_pool_forward(t.stage_io.back(), t.seg, &t.pool);
    return out;
}

RowMat SetAbstraction::backward(const SaTape& tape, const RowMat& dpooled) {
    RowMat d = group_max_pool_backward(tape.pool, dpooled);
    for (std::size_t k = ws.size(); k-- > 0;) {
        relu_backward_inplace(tape.stage_io[k + 1], d);
        d = bns[k].backward(tape.bn_caches[k], d);
        d = linear_backward(tape.stage_io[k], ws[k], bs[k], d);
    }
    RowMat dsrc = RowMat::Zero(static_cast<Eigen::Index>(tape.src_rows),
                               static_cast<Eigen::Index>(tape.in_channels));
    if (tape.in_channels > 0) {
        for (std::size_t r = 0; r < tape.member_src_rows.size(); ++r)
            dsrc.row(static_cast<Eigen::Index>(tape.member_src_rows[r])) +=
                d.row(static_cast<Eigen::Index>(r))
                    .tail(static_cast<Eigen::Index>(tape.in_channels));
    }
    return dsrc;
}

void SetAbstraction::visit_params(const std::function<void(const std::string&, Param&)>& f,
                                  const std::string& prefix) {
    for (std::size_t k = 0; k < ws.size(); ++k) {
        const std::string s = prefix + ".mlp" + std::to_string(k);
        f(s + ".w", ws[k]);
        f(s + ".b", bs[k]);
        f(s + ".bn.gamma", bns[k].gamma);
        f(s + ".bn.beta", bns[k].beta);
    }
}

void SetAbstraction::visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                                 const std::string& prefix) {
    for (std::size_t k = 0; k < bns.size(); ++k) {
        const std::string s = prefix + ".mlp" + std::to_string(k);
        f(s + ".bn.rm", bns[k].running_mean);
        f(s + ".bn.rv", bns[k].running_var);
    }
}

// ---------------------------------------------------------------------------
// adaptation
// ---------------------------------------------------------------------------

AdaptMlp::AdaptMlp(std::size_t in_ch, std::size_t d)
    : w0({in_ch, d}), b0({d}), w1({d, d}), b1({d}), bn0(d), bn1(d) {}

void AdaptMlp::init_params(Rng& rng) {
    fan_in_uniform(w0, rng);
    fan_in_uniform(w1, rng);
    b0.value.fill(0.0);
    b1.value.fill(0.0);
}

RowMat AdaptMlp::forward(const RowMat& x, Mode mode, bool update_stats, AdaptTape* tape) {
    AdaptTape local;
    AdaptTape& t = tape ? *tape : local;
    t.x0 = x;
    RowMat h = linear_forward(x, w0, b0);
    h = bn0.forward(h, mode, update_stats, &t.bn0);
    relu_inplace(h);
    t.relu0 = std::move(h);
    h = linear_forward(t.relu0, w1, b1);
    h = bn1.forward(h, mode, update_stats, &t.bn1);
    relu_inplace(h);
    t.relu1 = std::move(h);
    return l2_normalize_forward(t.relu1);
}

RowMat AdaptMlp::backward(const AdaptTape& tape, const RowMat& dz) {
    RowMat d = l2_normalize_backward(tape.relu1, dz);
    relu_backward_inplace(tape.relu1, d);
    d = bn1.backward(tape.bn1, d);
    d = linear_backward(tape.relu0, w1, b1, d);
    relu_backward_inplace(tape.relu0, d);
    d = bn0.backward(tape.bn0, d);
    return linear_backward(tape.x0, w0, b0, d);
}

void AdaptMlp::visit_params(const std::function<void(const std::string&, Param&)>& f,
                            const std::string& prefix) {
    f(prefix + ".fc0.w", w0);
    f(prefix + ".fc0.b", b0);
    f(prefix + ".bn0.gamma", bn0.gamma);
    f(prefix + ".bn0.beta", bn0.beta);
    f(prefix + ".fc1.w", w1);
    f(prefix + ".fc1.b", b1);
    f(prefix + ".bn1.gamma", bn1.gamma);
    f(prefix + ".bn1.beta", bn1.beta);
}

void AdaptMlp::visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                           const std::string& prefix) {
    f(prefix + ".bn0.rm", bn0.running_mean);
    f(prefix + ".bn0.rv", bn0.running_var);
    f(prefix + ".bn1.rm", bn1.running_mean);
    f(prefix + ".bn1.rv", bn1.running_var);
}

// ---------------------------------------------------------------------------
// encoder
// ---------------------------------------------------------------------------

Encoder::Encoder(const EncoderSpec& s, std::uint64_t init_seed) : spec(s) {
    spec.validate();
    std::size_t in_ch = 0;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        sa.emplace_back(spec.layers[l], in_ch);
        in_ch = spec.layers[l].mlp.back();
    }
    for (std::size_t l = 0; l < kLayerCount; ++l)
        adapt.emplace_back(spec.layers[l].mlp.back(), spec.adapt_dim);

    Rng rng = derive_rng(init_seed, StreamTag::param_init);
    for (auto& s_layer : sa) s_layer.init_params(rng);
    for (auto& a : adapt) a.init_params(rng);
}

EncodeOut Encoder::encode_batch(const std::vector<PointCloud>& clouds, Mode mode,
                                bool update_stats, EncodeTape* tape) {
    if (clouds.empty()) throw InvalidInputError("encode: empty batch");
    const std::size_t n = clouds.front().size();
    if (n < spec.layers[0].centroids)
        throw InvalidInputError("encode: cloud has " + std::to_string(n) + " points, needs >= " +
                                std::to_string(spec.layers[0].centroids));
    std::vector<Vec3> coords;
    coords.reserve(clouds.size() * n);
    for (const auto& c : clouds) {
        if (c.size() != n) throw InvalidInputError("encode: clouds in a batch must share N");
        for (const auto& p : c.points) {
            if (!p.allFinite()) throw InvalidInputError("encode: non-finite coordinate");
            coords.push_back(p);
        }
    }

    EncodeTape local;
    EncodeTape& t = tape ? *tape : local;
    t.out.n_clouds = clouds.size();

    RowMat feats(0, 0);
    std::span<const Vec3> pts(coords);
    std::vector<Vec3> next_coords;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        BatchLayer bl = sa[l].forward(pts, feats, clouds.size(), mode, update_stats, &t.sa[l]);
        feats = bl.features;
        next_coords = bl.centroids;
        t.out.layers[l] = std::move(bl);
        pts = std::span<const Vec3>(next_coords);
    }
    return t.out;
}

EncodeOut Encoder::encode(const PointCloud& cloud, Mode mode) {
    return encode_batch({cloud}, mode, false, nullptr);
}

void Encoder::encode_backward(const EncodeTape& tape, std::array<RowMat, kLayerCount> dfeat) {
    for (std::size_t l = 0; l < kLayerCount; ++l)
        if (dfeat[l].size() == 0)
            dfeat[l] = RowMat::Zero(tape.out.layers[l].features.rows(),
                                    tape.out.layers[l].features.cols());
    for (std::size_t l = kLayerCount; l-- > 0;) {
        const RowMat dsrc = sa[l].backward(tape.sa[l], dfeat[l]);
        if (l > 0) dfeat[l - 1] += dsrc;  // source features of layer l are layer l-1 outputs
    }
}

std::array<RowMat, kLayerCount> Encoder::adapt_all(const EncodeOut& out, Mode mode,
                                                   bool update_stats, AdaptAllTape* tape) {
    std::array<RowMat, kLayerCount> z;
    for (std::size_t l = 0; l < kLayerCount; ++l)
        z[l] = adapt[l].forward(out.layers[l].features, mode, update_stats,
                                tape ? &tape->layer[l] : nullptr);
    return z;
}

std::array<RowMat, kLayerCount> Encoder::adapt_backward(const AdaptAllTape& tape,
                                                        const std::array<RowMat, kLayerCount>& dz) {
    std::array<RowMat, kLayerCount> dfeat;
    for (std::size_t l = 0; l < kLayerCount; ++l) {
        if (dz[l].size() == 0) {
            dfeat[l] = RowMat::Zero(tape.layer[l].x0.rows(), tape.layer[l].x0.cols());
            continue;
        }
        dfeat[l] = adapt[l].backward(tape.layer[l], dz[l]);
    }
    return dfeat;
}

void Encoder::visit_params(const std::function<void(const std::string&, Param&)>& f) {
    for (std::size_t l = 0; l < kLayerCount; ++l)
        sa[l].visit_params(f, std::string("enc.") + kLayerNames[l]);
    for (std::size_t l = 0; l < kLayerCount; ++l)
        adapt[l].visit_params(f, std::string("adapt.") + kLayerNames[l]);
}

void Encoder::visit_state(const std::function<void(const std::string&, Tensor&)>& f) {
    for (std::size_t l = 0; l < kLayerCount; ++l)
        sa[l].visit_state(f, std::string("enc.") + kLayerNames[l]);
    for (std::size_t l = 0; l < kLayerCount; ++l)
        adapt[l].visit_state(f, std::string("adapt.") + kLayerNames[l]);
}

void Encoder::zero_grad() {
    visit_params([](const std::string&, Param& p) { p.zero_grad(); });
}

}  // namespace pointdisc
