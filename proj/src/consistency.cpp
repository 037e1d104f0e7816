#include "pointdisc/consistency.hpp"

#include <cmath>

#include "pointdisc/error.hpp"

namespace pointdisc {

namespace {

void fan_in_uniform(Param& w, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(w.value.shape[0]));
    for (auto& v : w.value.data) v = rng.uniform(-bound, bound);
}

}  // namespace

// ---------------------------------------------------------------------------
// conditioner
// ---------------------------------------------------------------------------

Conditioner::Conditioner(std::size_t zhat_dim, std::size_t channels, ConditionerKind k,
                         double init_out, Rng& rng)
    : kind(k) {
    if (kind == ConditionerKind::parallel) {
        w0 = Param({zhat_dim, channels});
        b0 = Param({channels});
        b0.value.fill(init_out);  // zero weights + constant bias = constant output
    } else {
        w0 = Param({zhat_dim, channels});
        b0 = Param({channels});
        w1 = Param({channels, channels});
        b1 = Param({channels});
        fan_in_uniform(w0, rng);
        b1.value.fill(init_out);  // final layer zeroed, same constant-output contract
    }
}

RowMat Conditioner::forward(const ConsBatch& batch, Tape* tape) const {
    RowMat h = split_linear_forward(batch.z, batch.p, batch.seg, w0, b0);
    if (kind == ConditionerKind::parallel) return h;
    Tape local;
    Tape& t = tape ? *tape : local;
    t.relu0 = relu_forward(h);
    return linear_forward(t.relu0, w1, b1);
}

void Conditioner::backward(const ConsBatch& batch, const Tape& tape, const RowMat& dy, RowMat* dz,
                           RowMat* dp) {
    if (kind == ConditionerKind::parallel) {
        split_linear_backward(batch.z, batch.p, batch.seg, w0, b0, dy, dz, dp);
        return;
    }
    RowMat d = linear_backward(tape.relu0, w1, b1, dy);
    d = relu_backward(tape.relu0, d);
    split_linear_backward(batch.z, batch.p, batch.seg, w0, b0, d, dz, dp);
}

void Conditioner::visit_params(const std::function<void(const std::string&, Param&)>& f,
                               const std::string& prefix) {
    f(prefix + ".w", w0);
    f(prefix + ".b", b0);
    if (kind == ConditionerKind::stacked) {
        f(prefix + ".w1", w1);
        f(prefix + ".b1", b1);
    }
}

// ---------------------------------------------------------------------------
// normalization site
// ---------------------------------------------------------------------------

ConsNormSite::ConsNormSite(std::size_t zhat_dim, std::size_t channels, NormKind k,
                           ConditionerKind ck, Rng& rng)
    : kind(k),
      gamma_map(zhat_dim, channels, ck, 1.0, rng),
      beta_map(zhat_dim, channels, ck, 0.0, rng),
      norm(channels) {}

RowMat ConsNormSite::forward(const RowMat& x, const ConsBatch& batch, Mode mode,
                             bool update_stats, Tape* tape) {
    Tape local;
    Tape& t = tape ? *tape : local;
    if (kind == NormKind::bn) return norm.normalize_only(x, mode, update_stats, &t.bn);
    t.gamma_rows = gamma_map.forward(batch, &t.gamma_tape);
    const RowMat beta_rows = beta_map.forward(batch, &t.beta_tape);
    return norm.forward(x, t.gamma_rows, beta_rows, mode, update_stats, &t.bn);
}

RowMat ConsNormSite::backward(const Tape& tape, const ConsBatch& batch, const RowMat& dy,
                              RowMat* dz, RowMat* dp) {
    if (kind == NormKind::bn) return norm.normalize_only_backward(tape.bn, dy);
    RowMat dx, dgamma;
    norm.backward(tape.bn, tape.gamma_rows, dy, dx, dgamma);
    gamma_map.backward(batch, tape.gamma_tape, dgamma, dz, dp);
    beta_map.backward(batch, tape.beta_tape, dy, dz, dp);  // d(beta rows) == dy
    return dx;
}

void ConsNormSite::visit_params(const std::function<void(const std::string&, Param&)>& f,
                                const std::string& prefix) {
    if (kind == NormKind::cbn) {
        gamma_map.visit_params(f, prefix + ".gamma");
        beta_map.visit_params(f, prefix + ".beta");
    }
}

void ConsNormSite::visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                               const std::string& prefix) {
    f(prefix + ".rm", norm.running_mean);
    f(prefix + ".rv", norm.running_var);
}

// ---------------------------------------------------------------------------
// consistency network
// ---------------------------------------------------------------------------

ConsNet::ConsNet(std::size_t d_, std::size_t hidden_, NormKind nk, ConditionerKind ck, Rng& rng)
    : d(d_),
      hidden(hidden_),
      norm_kind(nk),
      conditioner_kind(ck),
      entry_w({3 + d_, hidden_}),
      entry_b({hidden_}),
      site0(3 + d_, hidden_, nk, ck, rng),
      site1(3 + d_, hidden_, nk, ck, rng),
      site2(3 + d_, hidden_, nk, ck, rng),
      fc0_w({hidden_, hidden_}),
      fc0_b({hidden_}),
      fc1_w({hidden_, hidden_}),
      fc1_b({hidden_}),
      head_w({hidden_, 1}),
      head_b({1}) {
    fan_in_uniform(entry_w, rng);
    fan_in_uniform(fc0_w, rng);
    fan_in_uniform(fc1_w, rng);
    fan_in_uniform(head_w, rng);
}

Vec ConsNet::forward(const ConsBatch& batch, Mode mode, bool update_stats, ConsTape* tape) {
    if (static_cast<std::size_t>(batch.z.cols()) != d)
        throw InvalidInputError("cons_forward: z width must be " + std::to_string(d));
    if (batch.p.cols() != 3) throw InvalidInputError("cons_forward: p must be 3-D");
    if (batch.seg.row_count() != static_cast<std::size_t>(batch.p.rows()) ||
        batch.seg.group_count() != static_cast<std::size_t>(batch.z.rows()))
        throw InvalidInputError("cons_forward: segment layout mismatch");
    if (!batch.z.allFinite() || !batch.p.allFinite())
        throw NumericError("cons_forward: non-finite input");
    if (mode == Mode::train && batch.p.rows() < 2)
        throw InvalidInputError("cons_forward: train mode needs batch size >= 2");

    ConsTape local;
    ConsTape& t = tape ? *tape : local;
    t.batch = batch;

    t.entry_out = split_linear_forward(batch.z, batch.p, batch.seg, entry_w, entry_b);

    // pre-activation ResNet block with identity skip
    RowMat h = site0.forward(t.entry_out, batch, mode, update_stats, &t.site0);
    relu_inplace(h);
    t.relu0 = std::move(h);
    t.fc0_out = linear_forward(t.relu0, fc0_w, fc0_b);
    h = site1.forward(t.fc0_out, batch, mode, update_stats, &t.site1);
    relu_inplace(h);
    t.relu1 = std::move(h);
    t.fc1_out = linear_forward(t.relu1, fc1_w, fc1_b);
    t.resnet_out = t.entry_out + t.fc1_out;

    h = site2.forward(t.resnet_out, batch, mode, update_stats, &t.site2);
    relu_inplace(h);
    t.relu2 = std::move(h);
    const RowMat score = linear_forward(t.relu2, head_w, head_b);
    if (!score.allFinite()) throw NumericError("cons_forward: non-finite score");
    return score.col(0);
}

void ConsNet::backward(ConsTape& t, const Vec& dscore, RowMat* dz, RowMat* dp) {
    if (dz && dz->size() == 0) *dz = RowMat::Zero(t.batch.z.rows(), t.batch.z.cols());
    if (dp && dp->size() == 0) *dp = RowMat::Zero(t.batch.p.rows(), t.batch.p.cols());

    RowMat d = dscore;  // R x 1
    d = linear_backward(t.relu2, head_w, head_b, d);
    relu_backward_inplace(t.relu2, d);
    d = site2.backward(t.site2, t.batch, d, dz, dp);

    const RowMat dresnet = d;  // splits into the skip and the fc path
    d = linear_backward(t.relu1, fc1_w, fc1_b, dresnet);
    relu_backward_inplace(t.relu1, d);
    d = site1.backward(t.site1, t.batch, d, dz, dp);
    d = linear_backward(t.relu0, fc0_w, fc0_b, d);
    relu_backward_inplace(t.relu0, d);
    d = site0.backward(t.site0, t.batch, d, dz, dp);
    d += dresnet;  // identity skip

    split_linear_backward(t.batch.z, t.batch.p, t.batch.seg, entry_w, entry_b, d, dz, dp);
}

Vec ConsNet::score_rows(const RowMat& z, const RowMat& p, Mode mode) {
    if (z.rows() != p.rows()) throw InvalidInputError("cons_forward: z/p row mismatch");
    ConsBatch batch{z, p, Segments::identity(static_cast<std::size_t>(z.rows()))};
    return forward(batch, mode, mode == Mode::train, nullptr);
}

void ConsNet::visit_params(const std::function<void(const std::string&, Param&)>& f,
                           const std::string& prefix) {
    f(prefix + ".entry.w", entry_w);
    f(prefix + ".entry.b", entry_b);
    site0.visit_params(f, prefix + ".cbn0");
    f(prefix + ".fc0.w", fc0_w);
    f(prefix + ".fc0.b", fc0_b);
    site1.visit_params(f, prefix + ".cbn1");
    f(prefix + ".fc1.w", fc1_w);
    f(prefix + ".fc1.b", fc1_b);
    site2.visit_params(f, prefix + ".cbn2");
    f(prefix + ".head.w", head_w);
    f(prefix + ".head.b", head_b);
}

void ConsNet::visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                          const std::string& prefix) {
    site0.visit_state(f, prefix + ".cbn0");
    site1.visit_state(f, prefix + ".cbn1");
    site2.visit_state(f, prefix + ".cbn2");
}

std::size_t ConsNet::param_count() {
    std::size_t n = 0;
    visit_params([&n](const std::string&, Param& p) { n += p.value.numel(); }, "cons");
    return n;
}

// ---------------------------------------------------------------------------
// per-layer wrapper
// ---------------------------------------------------------------------------

Consistency::Consistency(std::size_t d, NormKind nk, ConditionerKind ck, bool shared_,
                         std::uint64_t init_seed)
    : shared(shared_) {
    Rng rng = derive_rng(init_seed, StreamTag::param_init, 0xC0);
    const std::size_t count = shared ? 1 : kLayerCount;
    nets.reserve(count);
    for (std::size_t i = 0; i < count; ++i) nets.emplace_back(d, 256, nk, ck, rng);
}

void Consistency::visit_params(const std::function<void(const std::string&, Param&)>& f) {
    for (std::size_t i = 0; i < nets.size(); ++i) {
        const std::string prefix =
            shared ? std::string("cons.shared") : std::string("cons.") + kLayerNames[i];
        nets[i].visit_params(f, prefix);
    }
}

void Consistency::visit_state(const std::function<void(const std::string&, Tensor&)>& f) {
    for (std::size_t i = 0; i < nets.size(); ++i) {
        const std::string prefix =
            shared ? std::string("cons.shared") : std::string("cons.") + kLayerNames[i];
        nets[i].visit_state(f, prefix);
    }
}

void Consistency::zero_grad() {
    visit_params([](const std::string&, Param& p) { p.zero_grad(); });
}

}  // namespace pointdisc
