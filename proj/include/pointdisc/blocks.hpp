#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "pointdisc/rng.hpp"
#include "pointdisc/tensor.hpp"

namespace pointdisc {

// R rows partitioned into G contiguous segments; offsets has G+1 entries with
// offsets[0] = 0 and offsets[G] = R. Used both for neighbor groups feeding the
// pooled encoder MLPs and for (z_j, points) batches in the consistency net.
struct Segments {
    std::vector<std::size_t> offsets{0};

    std::size_t group_count() const { return offsets.size() - 1; }
    std::size_t row_count() const { return offsets.back(); }
    std::size_t begin(std::size_t g) const { return offsets[g]; }
    std::size_t end(std::size_t g) const { return offsets[g + 1]; }
    std::size_t size(std::size_t g) const { return offsets[g + 1] - offsets[g]; }

    static Segments uniform(std::size_t groups, std::size_t rows_per_group);
    static Segments identity(std::size_t rows) { return uniform(rows, 1); }
};

// ---------------------------------------------------------------------------
// Linear: y = x W + b.  backward accumulates dW, db and returns dx.
// ---------------------------------------------------------------------------

RowMat linear_forward(const RowMat& x, const Param& w, const Param& b);
RowMat linear_backward(const RowMat& x, Param& w, Param& b, const RowMat& dy);

// Linear over rows [p_r | z_{g(r)}] where z is shared within each segment.
// W is a single (p_dim + z_dim) x out parameter, rows ordered p first, then z;
// the z half of the product is computed once per group.
RowMat split_linear_forward(const RowMat& z, const RowMat& p, const Segments& seg,
                            const Param& w, const Param& b);
// dz_accum (G x z_dim) and dp_accum (R x p_dim), when non-null, are += targets.
void split_linear_backward(const RowMat& z, const RowMat& p, const Segments& seg, Param& w,
                           Param& b, const RowMat& dy, RowMat* dz_accum, RowMat* dp_accum);

// Sums dy rows over each segment -> G x C.
RowMat segment_sum(const RowMat& dy, const Segments& seg);

// ---------------------------------------------------------------------------
// ReLU. Subgradient at 0 is 0, so the forward output doubles as the mask.
// ---------------------------------------------------------------------------

RowMat relu_forward(const RowMat& x);
void relu_inplace(RowMat& x);
RowMat relu_backward(const RowMat& y, const RowMat& dy);
// in-place variant: dy := relu'(y) . dy
void relu_backward_inplace(const RowMat& y, RowMat& dy);

// ---------------------------------------------------------------------------
// Batch normalization over rows (channels = columns), eps 1e-5, momentum 0.1.
// Train mode normalizes with biased batch statistics and updates running stats
// (unbiased variance); eval mode normalizes with the running statistics.
// ---------------------------------------------------------------------------

struct BnCache {
    RowMat xhat;
    Vec invstd;
    Mode mode = Mode::train;
};

struct BatchNorm {
    Param gamma, beta;
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    explicit BatchNorm(std::size_t channels);

    RowMat forward(const RowMat& x, Mode mode, bool update_stats, BnCache* cache);
    RowMat backward(const BnCache& cache, const RowMat& dy);
};

// Conditional batch normalization: shared batch statistics, per-row affine
// (gamma_rows, beta_rows supplied by the caller's conditioner). d(beta_rows)
// equals dy, so backward reports only dgamma_rows.
struct CondBatchNorm {
    Tensor running_mean, running_var;
    double eps = 1e-5;
    double momentum = 0.1;

    explicit CondBatchNorm(std::size_t channels);

    RowMat forward(const RowMat& x, const RowMat& gamma_rows, const RowMat& beta_rows, Mode mode,
                   bool update_stats, BnCache* cache);
    void backward(const BnCache& cache, const RowMat& gamma_rows, const RowMat& dy, RowMat& dx,
                  RowMat& dgamma_rows);

    // Plain normalization (fixed gamma = 1, beta = 0) for the bn ablation.
    RowMat normalize_only(const RowMat& x, Mode mode, bool update_stats, BnCache* cache);
    RowMat normalize_only_backward(const BnCache& cache, const RowMat& dy);
};

// Normalizes batch statistics shared by BatchNorm/CondBatchNorm; exposed for
// the stats-vs-affine split tests.
void batch_stats(const RowMat& x, Vec& mean, Vec& var_biased);

// ---------------------------------------------------------------------------
// Row-wise L2 normalization with eps 1e-12 in the denominator; the zero row
// maps to the zero row (and receives zero gradient).
// ---------------------------------------------------------------------------

RowMat l2_normalize_forward(const RowMat& x);
RowMat l2_normalize_backward(const RowMat& x, const RowMat& dy);

// ---------------------------------------------------------------------------
// Per-segment, per-channel max pool. Ties route to the lowest row index.
// ---------------------------------------------------------------------------

struct MaxPoolCache {
    Eigen::Matrix<std::ptrdiff_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> argmax;
    std::size_t input_rows = 0;
};

RowMat group_max_pool_forward(const RowMat& x, const Segments& seg, MaxPoolCache* cache);
RowMat group_max_pool_backward(const MaxPoolCache& cache, const RowMat& dpooled);

// ---------------------------------------------------------------------------
// Cross entropy of softmax(logits) against a one-hot target, computed with
// max subtraction. grad sums to zero by construction.
// ---------------------------------------------------------------------------

struct SoftmaxCeResult {
    double loss = 0.0;
    Vec grad;
};

SoftmaxCeResult softmax_cross_entropy(const Vec& logits, std::size_t target);

// ---------------------------------------------------------------------------
// Finite-difference gradient verification. loss_fn must be a deterministic
// function of the probed values (run forwards with running-stat updates off).
// rel err = |analytic - numeric| / max(1, |analytic|, |numeric|).
// ---------------------------------------------------------------------------

struct GradCheckEntry {
    double* value = nullptr;
    double analytic = 0.0;
    std::string label;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = true;
    std::string worst_label;
    std::size_t checked = 0;
};

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::vector<GradCheckEntry>& entries, double tolerance,
                           double h = 1e-5);

// Samples up to k coordinates from p.value (analytic taken from p.grad, which
// must already hold the gradients of loss_fn).
void sample_grad_entries(Param& p, const std::string& name, std::size_t k, Rng& rng,
                         std::vector<GradCheckEntry>& out);

}  // namespace pointdisc
