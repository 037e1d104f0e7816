#include "pointdisc/blocks.hpp"

#include <algorithm>
#include <cmath>

#include "pointdisc/error.hpp"

namespace pointdisc {

Segments Segments::uniform(std::size_t groups, std::size_t rows_per_group) {
    Segments s;
    s.offsets.resize(groups + 1);
    for (std::size_t g = 0; g <= groups; ++g) s.offsets[g] = g * rows_per_group;
    return s;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

RowMat linear_forward(const RowMat& x, const Param& w, const Param& b) {
    const auto wm = as_mat(w.value);
    if (x.cols() != wm.rows())
        throw InvalidInputError("linear: input width " + std::to_string(x.cols()) +
                                " != weight rows " + std::to_string(wm.rows()));
    if (static_cast<std::size_t>(wm.cols()) != b.value.numel())
        throw InvalidInputError("linear: bias length mismatch");
    RowMat y = x * wm;
    y.rowwise() += as_vec(b.value).transpose();
    return y;
}

RowMat linear_backward(const RowMat& x, Param& w, Param& b, const RowMat& dy) {
    if (dy.rows() != x.rows()) throw InvalidInputError("linear backward: row mismatch");
    as_mat(w.grad) += x.transpose() * dy;
    as_vec(b.grad) += dy.colwise().sum().transpose();
    return dy * as_mat(w.value).transpose();
}

RowMat segment_sum(const RowMat& dy, const Segments& seg) {
    RowMat out = RowMat::Zero(static_cast<Eigen::Index>(seg.group_count()), dy.cols());
    for (std::size_t g = 0; g < seg.group_count(); ++g) {
        for (std::size_t r = seg.begin(g); r < seg.end(g); ++r)
            out.row(static_cast<Eigen::Index>(g)) += dy.row(static_cast<Eigen::Index>(r));
    }
    return out;
}

RowMat split_linear_forward(const RowMat& z, const RowMat& p, const Segments& seg,
                            const Param& w, const Param& b) {
    const auto wm = as_mat(w.value);
    const Eigen::Index p_dim = p.cols();
    const Eigen::Index z_dim = z.cols();
    if (wm.rows() != p_dim + z_dim) throw InvalidInputError("split_linear: weight rows mismatch");
    if (static_cast<std::size_t>(p.rows()) != seg.row_count() ||
        static_cast<std::size_t>(z.rows()) != seg.group_count())
        throw InvalidInputError("split_linear: segment layout mismatch");

    const RowMat zw = z * wm.bottomRows(z_dim);  // G x out, shared within each segment
    RowMat y = p * wm.topRows(p_dim);
    y.rowwise() += as_vec(b.value).transpose();
    for (std::size_t g = 0; g < seg.group_count(); ++g) {
        for (std::size_t r = seg.begin(g); r < seg.end(g); ++r)
            y.row(static_cast<Eigen::Index>(r)) += zw.row(static_cast<Eigen::Index>(g));
    }
    return y;
}

void split_linear_backward(const RowMat& z, const RowMat& p, const Segments& seg, Param& w,
                           Param& b, const RowMat& dy, RowMat* dz_accum, RowMat* dp_accum) {
    auto wg = as_mat(w.grad);
    const auto wm = as_mat(w.value);
    const Eigen::Index p_dim = p.cols();
    const Eigen::Index z_dim = z.cols();

    const RowMat dy_seg = segment_sum(dy, seg);  // G x out
    wg.topRows(p_dim) += p.transpose() * dy;
    wg.bottomRows(z_dim) += z.transpose() * dy_seg;
    as_vec(b.grad) += dy.colwise().sum().transpose();

    if (dz_accum) *dz_accum += dy_seg * wm.bottomRows(z_dim).transpose();
    if (dp_accum) *dp_accum += dy * wm.topRows(p_dim).transpose();
}

// ---------------------------------------------------------------------------
// relu
// ---------------------------------------------------------------------------

RowMat relu_forward(const RowMat& x) { return x.cwiseMax(0.0); }

void relu_inplace(RowMat& x) { x = x.cwiseMax(0.0); }

RowMat relu_backward(const RowMat& y, const RowMat& dy) {
    return (y.array() > 0.0).cast<double>() * dy.array();
}

void relu_backward_inplace(const RowMat& y, RowMat& dy) {
    dy.array() *= (y.array() > 0.0).cast<double>();
}

// ---------------------------------------------------------------------------
// batch normalization
// ---------------------------------------------------------------------------

void batch_stats(const RowMat& x, Vec& mean, Vec& var_biased) {
    // row scans keep the channel reductions contiguous in row-major storage
    const double m = static_cast<double>(x.rows());
    mean = Vec::Zero(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) mean += x.row(r).transpose();
    mean /= m;
    var_biased = Vec::Zero(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        var_biased.array() += (x.row(r).transpose() - mean).array().square();
    var_biased /= m;
}

namespace {

// Shared normalization core; fills cache.xhat / cache.invstd.
void bn_normalize(const RowMat& x, Mode mode, bool update_stats, double eps, double momentum,
                  Tensor& running_mean, Tensor& running_var, BnCache& cache) {
    if (x.rows() < 2 && mode == Mode::train)
        throw InvalidInputError("batchnorm: train mode needs batch size >= 2");
    cache.mode = mode;
    Vec mean;
    if (mode == Mode::train) {
        Vec var;
        batch_stats(x, mean, var);
        cache.invstd = (var.array() + eps).rsqrt();
        if (update_stats) {
            const double m = static_cast<double>(x.rows());
            const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
            as_vec(running_mean) = (1.0 - momentum) * as_vec(running_mean) + momentum * mean;
            as_vec(running_var) =
                (1.0 - momentum) * as_vec(running_var) + momentum * unbias * var;
        }
    } else {
        mean = as_vec(running_mean);
        cache.invstd = (as_vec(running_var).array() + eps).rsqrt();
    }
    cache.xhat.resize(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        cache.xhat.row(r) =
            ((x.row(r).transpose() - mean).array() * cache.invstd.array()).transpose();
}

// dx for train-mode normalization given dxhat:
// dx = invstd/m * (m*dxhat - colsum(dxhat) - xhat .* colsum(dxhat .* xhat))
RowMat bn_input_grad(const BnCache& cache, const RowMat& dxhat) {
    if (cache.mode == Mode::eval) {
        RowMat dx(dxhat.rows(), dxhat.cols());
        for (Eigen::Index r = 0; r < dxhat.rows(); ++r)
            dx.row(r) = (dxhat.row(r).transpose().array() * cache.invstd.array()).transpose();
        return dx;
    }
    const double m = static_cast<double>(dxhat.rows());
    Vec sum_d = Vec::Zero(dxhat.cols());
    Vec sum_dx = Vec::Zero(dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        sum_d += dxhat.row(r).transpose();
        sum_dx.array() += dxhat.row(r).transpose().array() * cache.xhat.row(r).transpose().array();
    }
    const Vec scale = cache.invstd / m;
    RowMat dx(dxhat.rows(), dxhat.cols());
    for (Eigen::Index r = 0; r < dxhat.rows(); ++r)
        dx.row(r) = ((m * dxhat.row(r).transpose().array() - sum_d.array() -
                      cache.xhat.row(r).transpose().array() * sum_dx.array()) *
                     scale.array())
                        .transpose();
    return dx;
}

}  // namespace

BatchNorm::BatchNorm(std::size_t channels)
    : gamma({channels}), beta({channels}), running_mean({channels}), running_var({channels}) {
    gamma.value.fill(1.0);
    running_var.fill(1.0);
}

RowMat BatchNorm::forward(const RowMat& x, Mode mode, bool update_stats, BnCache* cache) {
    BnCache local;
    BnCache& c = cache ? *cache : local;
    if (static_cast<std::size_t>(x.cols()) != gamma.value.numel())
        throw InvalidInputError("batchnorm: channel count mismatch");
    bn_normalize(x, mode, update_stats, eps, momentum, running_mean, running_var, c);
    const auto g = as_vec(gamma.value);
    const auto b = as_vec(beta.value);
    RowMat y(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r)
        y.row(r) = (c.xhat.row(r).transpose().array() * g.array() + b.array()).transpose();
    return y;
}

RowMat BatchNorm::backward(const BnCache& cache, const RowMat& dy) {
    auto gg = as_vec(gamma.grad);
    auto bg = as_vec(beta.grad);
    RowMat dxhat(dy.rows(), dy.cols());
    const auto g = as_vec(gamma.value);
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        gg.array() += dy.row(r).transpose().array() * cache.xhat.row(r).transpose().array();
        bg += dy.row(r).transpose();
        dxhat.row(r) = (dy.row(r).transpose().array() * g.array()).transpose();
    }
    return bn_input_grad(cache, dxhat);
}

CondBatchNorm::CondBatchNorm(std::size_t channels)
    : running_mean({channels}), running_var({channels}) {
    running_var.fill(1.0);
}

RowMat CondBatchNorm::forward(const RowMat& x, const RowMat& gamma_rows, const RowMat& beta_rows,
                              Mode mode, bool update_stats, BnCache* cache) {
    if (gamma_rows.rows() != x.rows() || gamma_rows.cols() != x.cols() ||
        beta_rows.rows() != x.rows() || beta_rows.cols() != x.cols())
        throw InvalidInputError("cbn: gamma/beta shape must match input");
    BnCache local;
    BnCache& c = cache ? *cache : local;
    bn_normalize(x, mode, update_stats, eps, momentum, running_mean, running_var, c);
    return gamma_rows.array() * c.xhat.array() + beta_rows.array();
}

RowMat CondBatchNorm::normalize_only(const RowMat& x, Mode mode, bool update_stats,
                                     BnCache* cache) {
    BnCache local;
    BnCache& c = cache ? *cache : local;
    bn_normalize(x, mode, update_stats, eps, momentum, running_mean, running_var, c);
    return c.xhat;
}

RowMat CondBatchNorm::normalize_only_backward(const BnCache& cache, const RowMat& dy) {
    return bn_input_grad(cache, dy);
}

void CondBatchNorm::backward(const BnCache& cache, const RowMat& gamma_rows, const RowMat& dy,
                             RowMat& dx, RowMat& dgamma_rows) {
    dgamma_rows = dy.array() * cache.xhat.array();
    const RowMat dxhat = dy.array() * gamma_rows.array();
    dx = bn_input_grad(cache, dxhat);
}

// ---------------------------------------------------------------------------
// l2 normalize
// ---------------------------------------------------------------------------

namespace {
constexpr double kL2Eps = 1e-12;
}

RowMat l2_normalize_forward(const RowMat& x) {
    RowMat y = x;
    for (Eigen::Index r = 0; r < x.rows(); ++r) y.row(r) /= x.row(r).norm() + kL2Eps;
    return y;
}

RowMat l2_normalize_backward(const RowMat& x, const RowMat& dy) {
    RowMat dx(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double n = x.row(r).norm();
        if (n == 0.0) {
            dx.row(r).setZero();
            continue;
        }
        const double d = n + kL2Eps;
        const double xdy = x.row(r).dot(dy.row(r));
        dx.row(r) = dy.row(r) / d - x.row(r) * (xdy / (n * d * d));
    }
    return dx;
}

// ---------------------------------------------------------------------------
// group max pool
// ---------------------------------------------------------------------------

RowMat group_max_pool_forward(const RowMat& x, const Segments& seg, MaxPoolCache* cache) {
    const auto groups = static_cast<Eigen::Index>(seg.group_count());
    RowMat out(groups, x.cols());
    MaxPoolCache local;
    MaxPoolCache& c = cache ? *cache : local;
    c.argmax.resize(groups, x.cols());
    c.input_rows = static_cast<std::size_t>(x.rows());
    for (std::size_t g = 0; g < seg.group_count(); ++g) {
        if (seg.size(g) == 0) throw InvalidInputError("group_max_pool: empty segment");
        const auto gi = static_cast<Eigen::Index>(g);
        for (Eigen::Index ch = 0; ch < x.cols(); ++ch) {
            std::size_t best = seg.begin(g);
            double best_v = x(static_cast<Eigen::Index>(best), ch);
            for (std::size_t r = seg.begin(g) + 1; r < seg.end(g); ++r) {
                const double v = x(static_cast<Eigen::Index>(r), ch);
                if (v > best_v) {
                    best_v = v;
                    best = r;
                }
            }
            out(gi, ch) = best_v;
            c.argmax(gi, ch) = static_cast<std::ptrdiff_t>(best);
        }
    }
    return out;
}

RowMat group_max_pool_backward(const MaxPoolCache& cache, const RowMat& dpooled) {
    RowMat dx = RowMat::Zero(static_cast<Eigen::Index>(cache.input_rows), dpooled.cols());
    for (Eigen::Index g = 0; g < dpooled.rows(); ++g)
        for (Eigen::Index ch = 0; ch < dpooled.cols(); ++ch)
            dx(static_cast<Eigen::Index>(cache.argmax(g, ch)), ch) += dpooled(g, ch);
    return dx;
}

// ---------------------------------------------------------------------------
// softmax cross entropy
// ---------------------------------------------------------------------------

SoftmaxCeResult softmax_cross_entropy(const Vec& logits, std::size_t target) {
    if (target >= static_cast<std::size_t>(logits.size()))
        throw InvalidInputError("softmax_cross_entropy: target out of range");
    if (!logits.allFinite()) throw NumericError("softmax_cross_entropy: non-finite logit");
    const double mx = logits.maxCoeff();
    Vec shifted = logits.array() - mx;
    Vec ex = shifted.array().exp();
    const double denom = ex.sum();
    SoftmaxCeResult res;
    res.loss = std::log(denom) - shifted(static_cast<Eigen::Index>(target));
    res.grad = ex / denom;
    res.grad(static_cast<Eigen::Index>(target)) -= 1.0;
    return res;
}

// ---------------------------------------------------------------------------
// finite-difference verification
// ---------------------------------------------------------------------------

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<GradCheckEntry>& entries, double tolerance,
                           double h) {
    GradCheckReport rep;
    for (const auto& e : entries) {
        const double saved = *e.value;
        *e.value = saved + h;
        const double up = loss_fn();
        *e.value = saved - h;
        const double down = loss_fn();
        *e.value = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double rel = std::abs(e.analytic - numeric) /
                           std::max({1.0, std::abs(e.analytic), std::abs(numeric)});
        ++rep.checked;
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_label = e.label;
        }
    }
    rep.pass = rep.max_rel_err <= tolerance;
    return rep;
}

void sample_grad_entries(Param& p, const std::string& name, std::size_t k, Rng& rng,
                         std::vector<GradCheckEntry>& out) {
    const std::size_t n = p.value.numel();
    if (n == 0) return;
    if (n <= k) {
        for (std::size_t i = 0; i < n; ++i)
            out.push_back({&p.value.data[i], p.grad.data[i], name + "[" + std::to_string(i) + "]"});
        return;
    }
    for (std::size_t j = 0; j < k; ++j) {
        const std::size_t i = rng.index(n);
        out.push_back({&p.value.data[i], p.grad.data[i], name + "[" + std::to_string(i) + "]"});
    }
}

}  // namespace pointdisc
