#pragma once

#include <array>
#include <functional>
#include <string>

#include "pointdisc/blocks.hpp"
#include "pointdisc/encoder.hpp"

namespace pointdisc {

enum class NormKind { cbn, bn };
enum class ConditionerKind { parallel, stacked };

// A batch of (z_j, p) pairs: Z holds one feature row per group, P one point
// per row, rows of a group contiguous per seg. cons rows see [p, z_{g(r)}].
struct ConsBatch {
    RowMat z;  // G x D
    RowMat p;  // R x 3
    Segments seg;
};

// gamma(z_hat) / beta(z_hat) map; either a single affine map (parallel, the
// default reading of the two-FC conditioner) or a 2-layer MLP (stacked, the
// ablation alternative). Initialized so the output is exactly `init_out`.
struct Conditioner {
    ConditionerKind kind = ConditionerKind::parallel;
    Param w0, b0;  // (3+D) -> C
    Param w1, b1;  // C -> C, stacked only

    Conditioner(std::size_t zhat_dim, std::size_t channels, ConditionerKind k, double init_out,
                Rng& rng);

    struct Tape {
        RowMat relu0;  // stacked only
    };

    RowMat forward(const ConsBatch& batch, Tape* tape) const;
    void backward(const ConsBatch& batch, const Tape& tape, const RowMat& dy, RowMat* dz,
                  RowMat* dp);

    void visit_params(const std::function<void(const std::string&, Param&)>& f,
                      const std::string& prefix);
};

// One normalization site of the consistency net: CBN conditioned on z_hat, or
// plain batch normalization (fixed gamma=1, beta=0) under the bn ablation.
struct ConsNormSite {
    NormKind kind = NormKind::cbn;
    Conditioner gamma_map, beta_map;
    CondBatchNorm norm;

    ConsNormSite(std::size_t zhat_dim, std::size_t channels, NormKind k, ConditionerKind ck,
                 Rng& rng);

    struct Tape {
        RowMat gamma_rows;
        BnCache bn;
        Conditioner::Tape gamma_tape, beta_tape;
    };

    RowMat forward(const RowMat& x, const ConsBatch& batch, Mode mode, bool update_stats,
                   Tape* tape);
    RowMat backward(const Tape& tape, const ConsBatch& batch, const RowMat& dy, RowMat* dz,
                    RowMat* dp);

    void visit_params(const std::function<void(const std::string&, Param&)>& f,
                      const std::string& prefix);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                     const std::string& prefix);
};

struct ConsTape {
    ConsBatch batch;
    RowMat entry_out, relu0, fc0_out, relu1, fc1_out, resnet_out, relu2;
    ConsNormSite::Tape site0, site1, site2;
};

// Cons(z, p) -> scalar. Entry FC to 256, a pre-activation ResNet block
// (CBN -> ReLU -> FC, twice, identity skip), then CBN -> ReLU -> FC to 1.
struct ConsNet {
    std::size_t d = 256;
    std::size_t hidden = 256;
    NormKind norm_kind = NormKind::cbn;
    ConditionerKind conditioner_kind = ConditionerKind::parallel;

    Param entry_w, entry_b;
    ConsNormSite site0, site1, site2;
    Param fc0_w, fc0_b, fc1_w, fc1_b;
    Param head_w, head_b;

    ConsNet(std::size_t d_, std::size_t hidden_, NormKind nk, ConditionerKind ck, Rng& rng);

    Vec forward(const ConsBatch& batch, Mode mode, bool update_stats, ConsTape* tape);
    // dscore per row; accumulates parameter grads, returns dz (G x D) and dp (R x 3).
    void backward(ConsTape& tape, const Vec& dscore, RowMat* dz, RowMat* dp);

    // Row-aligned convenience: z and p have one row per pair.
    Vec score_rows(const RowMat& z, const RowMat& p, Mode mode);

    void visit_params(const std::function<void(const std::string&, Param&)>& f,
                      const std::string& prefix);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f,
                     const std::string& prefix);
    std::size_t param_count();
};

// One ConsNet per encoder layer by default; `shared` collapses them into one.
struct Consistency {
    bool shared = false;
    std::vector<ConsNet> nets;

    Consistency(std::size_t d, NormKind nk, ConditionerKind ck, bool shared_,
                std::uint64_t init_seed);

    ConsNet& net_for(LayerId l) { return shared ? nets[0] : nets[std::size_t(l)]; }

    void visit_params(const std::function<void(const std::string&, Param&)>& f);
    void visit_state(const std::function<void(const std::string&, Tensor&)>& f);
    void zero_grad();
};

}  // namespace pointdisc
